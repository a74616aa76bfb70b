"""Synthetic heterogeneous-preference data.

Each pair is produced by a small generative story: a subgroup category is
drawn per dimension, the category of the designated strength dimension
selects a preference-strength distribution, an annotator strength beta is
drawn from it, and two distinct random responses are compared. Every
response carries a deterministic "teacher" reward (a seeded hash of its
tokens mapped to a Gaussian), and the higher-reward response wins with
probability sigmoid(beta * |delta|). Labeling through |delta| plus an
upset draw makes the construction exactly mirror-symmetric: negating all
teacher rewards with the same noise swaps every chosen/rejected pair.

Generation is chunked: chunk i uses PCG32(seed, stream=i+1), so chunks
can be produced independently (or in parallel) and always concatenate to
the same dataset. The RNG and its seeding are specified in rng.py.

The JSONL interchange format has exactly the fields ``prompt``,
``chosen``, ``rejected`` (integer arrays), ``subgroups`` (string map),
``annotator_id``, ``true_beta`` and ``true_delta`` (numbers or null),
UTF-8 with LF line endings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import objective
from .model import VocabConfig
from .rng import PCG32, hash_tokens
from .specfn import sigmoid

JSONL_FIELDS = ("prompt", "chosen", "rejected", "subgroups", "annotator_id",
                "true_beta", "true_delta")
DEFAULT_CHUNK_SIZE = 1024

# synthetic analogues of typical annotation metadata axes
DEFAULT_SUBGROUP_DIMS = [
    ("age", ["18-24", "25-44", "45-64", "65+"], [2.0, 4.0, 3.0, 1.0]),
    ("gender", ["a", "b", "c"], [5.0, 5.0, 1.0]),
    ("education", ["primary", "secondary", "tertiary"], [1.0, 4.0, 5.0]),
    ("employment", ["employed", "student", "retired"], [6.0, 3.0, 1.0]),
    ("conversation_type", ["unguided", "values", "controversy"], [5.0, 3.0, 2.0]),
]


@dataclass
class PreferencePair:
    prompt: list[int]
    chosen: list[int]
    rejected: list[int]
    subgroups: dict[str, str] = field(default_factory=dict)
    annotator_id: str = ""
    true_beta: float | None = None
    true_delta: float | None = None

    def __post_init__(self) -> None:
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected responses must differ")

    def swapped(self) -> "PreferencePair":
        return PreferencePair(
            prompt=list(self.prompt), chosen=list(self.rejected),
            rejected=list(self.chosen), subgroups=dict(self.subgroups),
            annotator_id=self.annotator_id, true_beta=self.true_beta,
            true_delta=None if self.true_delta is None else -self.true_delta,
        )


@dataclass
class GeneratorSpec:
    n_pairs: int
    vocab: VocabConfig = field(default_factory=VocabConfig)
    # (name, categories, frequency weights) per dimension
    subgroup_dims: list[tuple[str, list[str], list[float]]] = field(
        default_factory=lambda: [
            (n, list(c), list(w)) for n, c, w in DEFAULT_SUBGROUP_DIMS
        ]
    )
    # category of this dimension selects the annotator strength distribution
    beta_dim: str | None = None  # default: first dimension
    beta_dist_per_category: dict[str, objective.StrengthDistribution] = field(
        default_factory=dict
    )
    teacher_delta_scale: float = 1.0
    rng_seed: int = 0
    # -1 negates every teacher reward (mirror datasets share all noise)
    delta_sign: int = 1

    def __post_init__(self) -> None:
        if self.n_pairs < 0:
            raise ValueError(f"n_pairs must be non-negative, got {self.n_pairs}")
        if self.teacher_delta_scale <= 0:
            raise ValueError("teacher_delta_scale must be positive")
        if not self.subgroup_dims:
            raise ValueError("at least one subgroup dimension is required")
        if self.delta_sign not in (1, -1):
            raise ValueError(f"delta_sign must be +-1, got {self.delta_sign}")
        names = [name for name, _, _ in self.subgroup_dims]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate subgroup dimension names in {names}")
        for name, cats, weights in self.subgroup_dims:
            if not cats or len(cats) != len(weights):
                raise ValueError(f"dimension {name!r} needs matching categories/weights")
            if any(w <= 0 for w in weights):
                raise ValueError(f"dimension {name!r} has non-positive weights")
        if self.beta_dim is None:
            self.beta_dim = self.subgroup_dims[0][0]
        if self.beta_dim not in names:
            raise ValueError(f"beta_dim {self.beta_dim!r} is not a declared dimension")
        beta_cats = next(c for n, c, _ in self.subgroup_dims if n == self.beta_dim)
        if not self.beta_dist_per_category:
            self.beta_dist_per_category = {
                c: objective.Gamma.from_effective(2.0, 16.7) for c in beta_cats
            }
        missing = [c for c in beta_cats if c not in self.beta_dist_per_category]
        if missing:
            raise ValueError(
                f"beta_dist_per_category missing categories {missing} of "
                f"dimension {self.beta_dim!r}"
            )


def gamma_sample(k: float, lam: float, rng: PCG32) -> float:
    """Gamma(shape k, rate lam) draw via Marsaglia-Tsang, with the
    u^(1/k) boost for k < 1."""
    if k <= 0 or lam <= 0:
        raise ValueError(f"gamma_sample requires k, lam > 0, got k={k}, lam={lam}")
    if k < 1.0:
        boost = (1.0 - rng.uniform()) ** (1.0 / k)  # (0,1]^{1/k}
        return max(gamma_sample(k + 1.0, lam, rng) * boost, 5e-324)
    d = k - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = 1.0 - rng.uniform()  # (0,1]
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v / lam


def lognormal_sample(mu: float, sigma: float, rng: PCG32) -> float:
    if sigma < 0:
        raise ValueError(f"lognormal_sample requires sigma >= 0, got {sigma}")
    return math.exp(mu + sigma * rng.normal())


def strength_sample(dist: objective.StrengthDistribution, rng: PCG32) -> float:
    if isinstance(dist, objective.PointMass):
        return dist.beta
    if isinstance(dist, objective.LogNormal):
        return lognormal_sample(float(dist.mu.value), dist.sigma, rng)
    if isinstance(dist, objective.Gamma):
        return gamma_sample(dist.k, dist.lam, rng)
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def teacher_token_value(token: int, seed: int) -> float:
    """Unit-Gaussian value of one vocabulary token under the seeded map."""
    return PCG32(hash_tokens(seed, [token]), stream=3).normal()


def teacher_reward(tokens, seed: int, scale: float) -> float:
    """Deterministic teacher reward of a token sequence.

    Per-token hash-to-Gaussian values are averaged with a 1/sqrt(len)
    scaling, so rewards have length-independent variance and remain a
    function of token content the toy policy can learn. The std is
    scale/sqrt(2), making the reward *difference* of two independent
    responses approximately Normal(0, scale^2).
    """
    total = math.fsum(teacher_token_value(t, seed) for t in tokens)
    return total / math.sqrt(len(tokens)) * (scale / math.sqrt(2.0))


def _pick_category(cats: list[str], weights: list[float], rng: PCG32) -> str:
    total = sum(weights)
    u = rng.uniform() * total
    acc = 0.0
    for cat, w in zip(cats, weights):
        acc += w
        if u < acc:
            return cat
    return cats[-1]


def _random_tokens(rng: PCG32, max_len: int, vocab_size: int,
                   min_len: int = 1) -> list[int]:
    length = min_len + rng.randint_below(max_len - min_len + 1)
    return [rng.randint_below(vocab_size) for _ in range(length)]


def _generate_chunk(spec: GeneratorSpec, chunk_index: int, start: int,
                    count: int) -> list[PreferencePair]:
    rng = PCG32(spec.rng_seed, stream=chunk_index + 1)
    v = spec.vocab
    token_values = [teacher_token_value(t, spec.rng_seed)
                    for t in range(v.vocab_size)]
    reward_scale = spec.teacher_delta_scale / math.sqrt(2.0)

    def reward(tokens: list[int]) -> float:
        return (math.fsum(token_values[t] for t in tokens)
                / math.sqrt(len(tokens)) * reward_scale)

    pairs = []
    for offset in range(count):
        idx = start + offset
        subgroups = {
            name: _pick_category(cats, weights, rng)
            for name, cats, weights in spec.subgroup_dims
        }
        beta = strength_sample(
            spec.beta_dist_per_category[subgroups[spec.beta_dim]], rng
        )
        prompt = _random_tokens(rng, v.max_prompt_len, v.vocab_size)
        resp_a = _random_tokens(rng, v.max_response_len, v.vocab_size)
        resp_b = _random_tokens(rng, v.max_response_len, v.vocab_size)
        while resp_b == resp_a:
            resp_b = _random_tokens(rng, v.max_response_len, v.vocab_size)
        reward_a = spec.delta_sign * reward(resp_a)
        reward_b = spec.delta_sign * reward(resp_b)
        if reward_a >= reward_b:
            hi, lo = resp_a, resp_b
            gap = reward_a - reward_b
        else:
            hi, lo = resp_b, resp_a
            gap = reward_b - reward_a
        upset = rng.uniform() >= sigmoid(beta * gap)
        chosen, rejected = (lo, hi) if upset else (hi, lo)
        pairs.append(PreferencePair(
            prompt=prompt, chosen=chosen, rejected=rejected,
            subgroups=subgroups, annotator_id=f"a{idx:06d}",
            true_beta=beta, true_delta=-gap if upset else gap,
        ))
    return pairs


def generate(spec: GeneratorSpec,
             chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[PreferencePair]:
    """Generate spec.n_pairs pairs in deterministic chunk order."""
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    pairs: list[PreferencePair] = []
    chunk_index = 0
    start = 0
    while start < spec.n_pairs:
        count = min(chunk_size, spec.n_pairs - start)
        pairs.extend(_generate_chunk(spec, chunk_index, start, count))
        chunk_index += 1
        start += count
    return pairs


def pair_to_json(pair: PreferencePair) -> str:
    doc = {
        "prompt": list(pair.prompt),
        "chosen": list(pair.chosen),
        "rejected": list(pair.rejected),
        "subgroups": dict(pair.subgroups),
        "annotator_id": pair.annotator_id,
        "true_beta": pair.true_beta,
        "true_delta": pair.true_delta,
    }
    return json.dumps(doc, ensure_ascii=False)


def write_jsonl(pairs, path) -> None:
    text = "".join(pair_to_json(p) + "\n" for p in pairs)
    Path(path).write_bytes(text.encode("utf-8"))


def pair_from_json(line: str) -> PreferencePair:
    doc = json.loads(line)
    missing = [f for f in JSONL_FIELDS if f not in doc]
    if missing:
        raise ValueError(f"pair record missing fields {missing}")
    return PreferencePair(
        prompt=[int(t) for t in doc["prompt"]],
        chosen=[int(t) for t in doc["chosen"]],
        rejected=[int(t) for t in doc["rejected"]],
        subgroups={str(k): str(v) for k, v in (doc["subgroups"] or {}).items()},
        annotator_id=str(doc["annotator_id"]),
        true_beta=None if doc["true_beta"] is None else float(doc["true_beta"]),
        true_delta=None if doc["true_delta"] is None else float(doc["true_delta"]),
    )


def read_jsonl(path) -> list[PreferencePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                pairs.append(pair_from_json(line))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return pairs
