"""Generator tests: labeling law, subgroup frequencies, mirror symmetry,
chunked determinism, JSONL round trips."""

import json
import math

import numpy as np
import pytest

from mixlogit import datagen, objective
from mixlogit.datagen import GeneratorSpec, PreferencePair
from mixlogit.model import VocabConfig
from mixlogit.rng import PCG32
from mixlogit.specfn import sigmoid

VOCAB = VocabConfig(vocab_size=16, max_prompt_len=4, max_response_len=6)


def spec_with(beta_dist, n=1000, seed=0, **kw):
    return GeneratorSpec(
        n_pairs=n, vocab=VOCAB,
        subgroup_dims=[("conversation_type", ["u", "v"], [3.0, 1.0])],
        beta_dist_per_category={"u": beta_dist, "v": beta_dist},
        rng_seed=seed, **kw)


def test_pair_count_and_fields():
    pairs = datagen.generate(spec_with(objective.PointMass(0.1), n=257))
    assert len(pairs) == 257
    for p in pairs:
        assert p.chosen != p.rejected
        assert all(0 <= t < VOCAB.vocab_size
                   for t in p.prompt + p.chosen + p.rejected)
        assert 1 <= len(p.prompt) <= VOCAB.max_prompt_len
        assert 1 <= len(p.chosen) <= VOCAB.max_response_len
        assert p.true_beta is not None and p.true_beta > 0
        assert p.true_delta is not None
        assert p.subgroups["conversation_type"] in ("u", "v")
        assert p.annotator_id.startswith("a")


def test_deterministic_annotator_always_picks_higher_reward():
    pairs = datagen.generate(spec_with(objective.PointMass(1e6), n=1000))
    assert all(p.true_delta > 0 for p in pairs)


def test_indifferent_annotator_near_half():
    pairs = datagen.generate(spec_with(objective.PointMass(1e-12), n=10_000))
    wins = sum(1 for p in pairs if p.true_delta > 0)
    se = math.sqrt(0.25 * len(pairs))
    assert abs(wins - 0.5 * len(pairs)) <= 3 * se


def test_win_frequency_matches_closed_form():
    # beta ~ Gamma(2, 10), gap fixed at 2: empirical win rate of the
    # labeling rule within 3 SE of the closed-form expectation
    rng = PCG32(404)
    n = 100_000
    wins = 0
    for _ in range(n):
        beta = datagen.gamma_sample(2.0, 10.0, rng)
        if rng.uniform() < sigmoid(beta * 2.0):
            wins += 1
    expect, *_ = objective.gamma_inner_expectation(2.0, 2.0, 10.0)
    se = math.sqrt(expect * (1 - expect) / n)
    assert abs(wins / n - expect) <= 3 * se


def test_subgroup_frequencies_within_multinomial_bounds():
    spec = GeneratorSpec(
        n_pairs=10_000, vocab=VOCAB,
        subgroup_dims=[("dim", ["a", "b", "c"], [1.0, 2.0, 7.0])],
        beta_dist_per_category={c: objective.PointMass(0.1) for c in "abc"},
        rng_seed=5)
    pairs = datagen.generate(spec)
    counts = {c: 0 for c in "abc"}
    for p in pairs:
        counts[p.subgroups["dim"]] += 1
    for cat, w in zip("abc", [0.1, 0.2, 0.7]):
        se = math.sqrt(10_000 * w * (1 - w))
        assert abs(counts[cat] - 10_000 * w) <= 3 * se, (cat, counts)


def test_label_flip_mirror():
    base = spec_with(objective.Gamma.from_effective(2.0, 10.0), n=500, seed=9)
    flipped = spec_with(objective.Gamma.from_effective(2.0, 10.0), n=500, seed=9,
                        delta_sign=-1)
    a = datagen.generate(base)
    b = datagen.generate(flipped)
    for pa, pb in zip(a, b):
        assert pa.prompt == pb.prompt
        assert pa.chosen == pb.rejected and pa.rejected == pb.chosen
        assert pa.subgroups == pb.subgroups
        assert pa.true_beta == pb.true_beta
        # the winner's margin under its own teacher is mirror-invariant
        assert pa.true_delta == pb.true_delta


def test_chunked_generation_stable():
    spec = spec_with(objective.PointMass(0.1), n=300, seed=3)
    whole = datagen.generate(spec, chunk_size=100)
    again = datagen.generate(spec, chunk_size=100)
    assert [datagen.pair_to_json(p) for p in whole] == \
           [datagen.pair_to_json(p) for p in again]
    # a chunk regenerated in isolation matches its slice of the whole
    alone = datagen._generate_chunk(spec, chunk_index=1, start=100, count=100)
    assert [datagen.pair_to_json(p) for p in whole[100:200]] == \
           [datagen.pair_to_json(p) for p in alone]


def test_jsonl_round_trip(tmp_path):
    pairs = datagen.generate(spec_with(objective.LogNormal.from_effective(-2.3, 0.6), n=50))
    path = tmp_path / "pairs.jsonl"
    datagen.write_jsonl(pairs, path)
    raw = path.read_bytes()
    assert raw.endswith(b"\n") and b"\r" not in raw
    doc = json.loads(raw.decode("utf-8").splitlines()[0])
    assert list(doc.keys()) == list(datagen.JSONL_FIELDS)
    loaded = datagen.read_jsonl(path)
    assert [datagen.pair_to_json(p) for p in loaded] == \
           [datagen.pair_to_json(p) for p in pairs]


def test_jsonl_missing_field_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"prompt": [1], "chosen": [2], "rejected": [3]}\n')
    with pytest.raises(ValueError, match="missing fields"):
        datagen.read_jsonl(path)


def test_identical_responses_rejected():
    with pytest.raises(ValueError, match="must differ"):
        PreferencePair(prompt=[0], chosen=[1], rejected=[1])


def test_spec_validation():
    with pytest.raises(ValueError, match="beta_dim"):
        GeneratorSpec(n_pairs=1, vocab=VOCAB, beta_dim="nope")
    with pytest.raises(ValueError, match="missing categories"):
        GeneratorSpec(
            n_pairs=1, vocab=VOCAB,
            subgroup_dims=[("d", ["x", "y"], [1.0, 1.0])],
            beta_dist_per_category={"x": objective.PointMass(0.1)})
    with pytest.raises(ValueError, match="teacher_delta_scale"):
        GeneratorSpec(n_pairs=1, vocab=VOCAB, teacher_delta_scale=0.0)


def test_default_beta_dists_cover_first_dimension():
    spec = GeneratorSpec(n_pairs=1, vocab=VOCAB)
    assert spec.beta_dim == spec.subgroup_dims[0][0]
    cats = spec.subgroup_dims[0][1]
    assert set(spec.beta_dist_per_category) == set(cats)


def test_teacher_reward_deterministic_and_scaled():
    r1 = datagen.teacher_reward([1, 2, 3], seed=7, scale=4.0)
    r2 = datagen.teacher_reward([1, 2, 3], seed=7, scale=4.0)
    assert r1 == r2
    assert datagen.teacher_reward([1, 2, 3], seed=8, scale=4.0) != r1
    # reward differences across many response draws have std ~ scale
    rng = PCG32(15)
    gaps = []
    for _ in range(4000):
        ra = [rng.randint_below(16) for _ in range(1 + rng.randint_below(6))]
        rb = [rng.randint_below(16) for _ in range(1 + rng.randint_below(6))]
        gaps.append(datagen.teacher_reward(ra, 7, 4.0)
                    - datagen.teacher_reward(rb, 7, 4.0))
    assert 3.0 < np.std(gaps) < 5.0
