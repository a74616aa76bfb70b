"""Toy categorical sequence models: trainable policy and frozen reference.

The architecture is a fixed-window feed-forward language model: the last
``window`` tokens of the prefix are embedded and averaged, pushed through
one tanh hidden layer, and projected to vocabulary logits. Three weight
matrices, no biases:

    embedding  [vocab_size, hidden_dim]
    hidden     [hidden_dim, hidden_dim]
    output     [hidden_dim, vocab_size]

The implicit reward of a response is the policy/reference log-probability
ratio; losses only ever consume the difference of those rewards between
the chosen and rejected response.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .rng import PCG32

CHECKPOINT_FORMAT = "mixlogit-policy-v1"
DEFAULT_WINDOW = 4


@dataclass(frozen=True)
class VocabConfig:
    vocab_size: int = 32
    max_prompt_len: int = 8
    max_response_len: int = 16

    def __post_init__(self) -> None:
        if self.vocab_size < 1 or self.max_prompt_len < 1 or self.max_response_len < 1:
            raise ValueError(f"VocabConfig fields must be positive: {self}")


class Model:
    """Policy or reference model; ``trainable`` decides whether gradients flow."""

    def __init__(self, vocab: VocabConfig, hidden_dim: int, window: int,
                 embedding: np.ndarray, hidden: np.ndarray, output: np.ndarray,
                 trainable: bool):
        v, d = vocab.vocab_size, hidden_dim
        if embedding.shape != (v, d) or hidden.shape != (d, d) or output.shape != (d, v):
            raise ValueError(
                f"parameter shapes {embedding.shape}, {hidden.shape}, {output.shape} "
                f"do not match vocab_size={v}, hidden_dim={d}"
            )
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.window = window
        self.trainable = trainable
        self.embedding = ad.Node(embedding.copy(), requires_grad=trainable)
        self.hidden = ad.Node(hidden.copy(), requires_grad=trainable)
        self.output = ad.Node(output.copy(), requires_grad=trainable)

    def parameters(self) -> list[tuple[str, ad.Node]]:
        return [("embedding", self.embedding), ("hidden", self.hidden),
                ("output", self.output)]

    def zero_adjoints(self) -> None:
        for _, p in self.parameters():
            p.zero_adjoint()

    def copy(self, trainable: bool) -> "Model":
        return Model(self.vocab, self.hidden_dim, self.window,
                     self.embedding.value, self.hidden.value, self.output.value,
                     trainable=trainable)

    def param_bytes(self) -> bytes:
        """Raw little-endian bytes of all parameters, for frozen-ness checks."""
        parts = [np.ascontiguousarray(p.value, dtype="<f8").tobytes()
                 for _, p in self.parameters()]
        return b"".join(parts)


def init_reference(vocab: VocabConfig, hidden_dim: int = 32, seed: int = 0,
                   std: float = 0.1, window: int = DEFAULT_WINDOW,
                   zero_output: bool = False) -> Model:
    """Frozen reference with seeded Gaussian weights (std 0.1 by default).

    ``zero_output`` zeroes the output projection so every position is an
    exact uniform distribution, handy for fixtures.
    """
    rng = PCG32(seed, stream=7)
    v, d = vocab.vocab_size, hidden_dim

    def gauss(shape):
        return np.array([rng.normal() for _ in range(int(np.prod(shape)))],
                        dtype=float).reshape(shape) * std

    emb = gauss((v, d))
    hid = gauss((d, d))
    out = np.zeros((d, v)) if zero_output else gauss((d, v))
    return Model(vocab, hidden_dim, window, emb, hid, out, trainable=False)


def init_policy_from(reference: Model) -> Model:
    """Policy initialized as an exact copy of the reference weights."""
    return reference.copy(trainable=True)


def _validate_tokens(vocab: VocabConfig, tokens, what: str) -> list[int]:
    toks = [int(t) for t in tokens]
    for t in toks:
        if not (0 <= t < vocab.vocab_size):
            raise ValueError(
                f"{what} token {t} out of range [0, {vocab.vocab_size})"
            )
    return toks


def _window_groups(prompt: list[int], response: list[int], width: int):
    """Positions grouped by context-window size: position t conditions on
    the last min(width, len(prompt)+t) tokens of prompt + response[:t].
    Yields (w, flat context indices, target tokens)."""
    groups: dict[int, tuple[list[int], list[int]]] = {}
    tokens = list(prompt) + list(response)
    n_prompt = len(prompt)
    for t, target in enumerate(response):
        avail = n_prompt + t
        w = min(width, avail)
        ctx, targets = groups.setdefault(w, ([], []))
        ctx.extend(tokens[avail - w:avail])
        targets.append(target)
    return groups.items()


def sequence_logprob(model: Model, prompt, response) -> ad.Node:
    """Scalar node: sum_t log p(response_t | prompt, response_<t)."""
    prompt = _validate_tokens(model.vocab, prompt, "prompt")
    response = _validate_tokens(model.vocab, response, "response")
    if not response:
        raise ValueError("response must be non-empty")
    total = None
    for w, (ctx, targets) in _window_groups(prompt, response, model.window):
        if w > 0:
            emb = ad.gather_rows(model.embedding, ctx)
            pooled = ad.window_mean(emb, w)
        else:  # empty prompt, first position: zero context vector
            pooled = ad.constant(np.zeros((len(targets), model.hidden_dim)))
        h = ad.tanh(ad.matmul(pooled, model.hidden))
        logp = ad.log_softmax(ad.matmul(h, model.output), axis=-1)
        part = ad.sum_(ad.take_per_row(logp, targets))
        total = part if total is None else ad.add(total, part)
    return total


def sequence_logprob_value(model: Model, prompt, response) -> float:
    """Plain-numpy version of sequence_logprob, for evaluation paths.

    Mirrors the node path operation for operation so both produce the
    same floating-point value.
    """
    prompt = _validate_tokens(model.vocab, prompt, "prompt")
    response = _validate_tokens(model.vocab, response, "response")
    if not response:
        raise ValueError("response must be non-empty")
    emb = model.embedding.value
    hid = model.hidden.value
    out = model.output.value
    total = 0.0
    for w, (ctx, targets) in _window_groups(prompt, response, model.window):
        if w > 0:
            rows = emb[np.asarray(ctx, dtype=np.intp)]
            pooled = rows.reshape(len(targets), w, -1).mean(axis=1)
        else:
            pooled = np.zeros((len(targets), model.hidden_dim))
        h = np.tanh(pooled @ hid)
        logits = h @ out
        shifted = logits - np.max(logits, axis=-1, keepdims=True)
        logp = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        total += float(np.sum(logp[np.arange(len(targets)), targets]))
    return total


def implicit_reward_delta(policy: Model, reference: Model, pair) -> ad.Node:
    """Differentiable scalar

        [log pi(y_w|x) - log ref(y_w|x)] - [log pi(y_l|x) - log ref(y_l|x)].

    Both models go through the node path so identical weights give an
    exact zero.
    """
    pol_w = sequence_logprob(policy, pair.prompt, pair.chosen)
    pol_l = sequence_logprob(policy, pair.prompt, pair.rejected)
    ref_w = sequence_logprob(reference, pair.prompt, pair.chosen)
    ref_l = sequence_logprob(reference, pair.prompt, pair.rejected)
    return ad.sub(ad.sub(pol_w, ref_w), ad.sub(pol_l, ref_l))


def reference_log_ratio_const(reference: Model, pair) -> float:
    """log ref(y_w|x) - log ref(y_l|x) via the node path (cacheable)."""
    ref_w = sequence_logprob(reference, pair.prompt, pair.chosen)
    ref_l = sequence_logprob(reference, pair.prompt, pair.rejected)
    return float(ref_w.value) - float(ref_l.value)


def save_checkpoint(model: Model, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "vocab": {
            "vocab_size": model.vocab.vocab_size,
            "max_prompt_len": model.vocab.max_prompt_len,
            "max_response_len": model.vocab.max_response_len,
        },
        "hidden_dim": model.hidden_dim,
        "window": model.window,
        "params": [
            {"name": name, "shape": list(p.value.shape),
             "data": p.value.reshape(-1).tolist()}
            for name, p in model.parameters()
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path, trainable: bool = False) -> Model:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    fmt = doc.get("format")
    if fmt != CHECKPOINT_FORMAT:
        raise ValueError(
            f"checkpoint format mismatch: expected {CHECKPOINT_FORMAT!r}, got {fmt!r}"
        )
    vocab = VocabConfig(**doc["vocab"])
    arrays = {}
    for entry in doc["params"]:
        arrays[entry["name"]] = np.array(entry["data"], dtype=float).reshape(
            entry["shape"]
        )
    return Model(vocab, doc["hidden_dim"], doc["window"],
                 arrays["embedding"], arrays["hidden"], arrays["output"],
                 trainable=trainable)
