"""Loss functions: plain DPO and its mixed-logit generalizations.

All variants share the structure -log p where p is the modeled
probability of the observed preference:

    point mass       p = sigmoid(beta * dr)
    lognormal (MC)   p = (1/K) sum_k sigmoid(exp(mu + sigma*eps_k) * dr)
    gamma (closed)   p = E_{b~Gamma(k,lam)}[sigmoid(b * dr)]

dr is the implicit-reward difference between chosen and rejected.
Positivity of sigma, k and lam is enforced by storing raw parameters and
mapping through softplus; gradients reach the raw parameters only when
the distribution is marked trainable.

The gamma expectation uses the Lerch reduction: for dr > 0,

    E = 1 - (lam/dr)^k * phi_neg1(k, 1 + lam/dr),

with the dr < 0 case obtained from E(-dr) = 1 - E(dr) and E(0) = 1/2.
Its partial derivatives are evaluated analytically through the zeta
partials so the whole closed form can be dropped into the autodiff graph
as a custom node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from . import specfn
from .rng import PCG32
from .specfn import SeriesConfig

# |dr| below this returns the exact limit value 1/2; the dr-slope is
# taken one-sided at the switch radius (the limit is finite, k/(4*lam)).
DELTA_R_SWITCH = 1e-8


class PointMass:
    """Degenerate strength distribution: plain DPO with fixed beta."""

    variant = "pointmass"

    def __init__(self, beta: float, trainable: bool = False):
        if beta <= 0:
            raise ValueError(f"PointMass beta must be positive, got {beta}")
        self.beta = float(beta)
        self.trainable = bool(trainable)  # kept for a uniform interface; never trained

    def mean(self) -> float:
        return self.beta

    def variance(self) -> float:
        return 0.0

    def raw_params(self) -> list[ad.Node]:
        return []

    def raw_values(self) -> tuple[float, ...]:
        return (self.beta,)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "beta": self.beta,
                "trainable": self.trainable}


class LogNormal:
    """beta = exp(mu + sigma*eps), sigma = softplus(sigma_raw)."""

    variant = "lognormal"

    def __init__(self, mu: float, sigma_raw: float, trainable: bool = False):
        self.trainable = bool(trainable)
        self.mu = ad.Node(float(mu), requires_grad=self.trainable)
        self.sigma_raw = ad.Node(float(sigma_raw), requires_grad=self.trainable)

    @classmethod
    def from_effective(cls, mu: float, sigma: float, trainable: bool = False):
        return cls(mu, specfn.softplus_inverse(sigma), trainable)

    @property
    def sigma(self) -> float:
        return specfn.softplus(float(self.sigma_raw.value))

    def mean(self) -> float:
        s = self.sigma
        return math.exp(float(self.mu.value) + 0.5 * s * s)

    def variance(self) -> float:
        s2 = self.sigma**2
        return (math.exp(s2) - 1.0) * math.exp(2.0 * float(self.mu.value) + s2)

    def raw_params(self) -> list[ad.Node]:
        return [self.mu, self.sigma_raw]

    def raw_values(self) -> tuple[float, ...]:
        return (float(self.mu.value), float(self.sigma_raw.value))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "mu": float(self.mu.value),
                "sigma_raw": float(self.sigma_raw.value),
                "sigma": self.sigma, "trainable": self.trainable}


class Gamma:
    """beta ~ Gamma(shape k, rate lam); k = softplus(k_raw), lam = softplus(lam_raw)."""

    variant = "gamma"

    def __init__(self, k_raw: float, lambda_raw: float, trainable: bool = False):
        self.trainable = bool(trainable)
        self.k_raw = ad.Node(float(k_raw), requires_grad=self.trainable)
        self.lambda_raw = ad.Node(float(lambda_raw), requires_grad=self.trainable)

    @classmethod
    def from_effective(cls, k: float, lam: float, trainable: bool = False):
        return cls(specfn.softplus_inverse(k), specfn.softplus_inverse(lam), trainable)

    @property
    def k(self) -> float:
        return specfn.softplus(float(self.k_raw.value))

    @property
    def lam(self) -> float:
        return specfn.softplus(float(self.lambda_raw.value))

    def mean(self) -> float:
        return self.k / self.lam

    def variance(self) -> float:
        return self.k / self.lam**2

    def raw_params(self) -> list[ad.Node]:
        return [self.k_raw, self.lambda_raw]

    def raw_values(self) -> tuple[float, ...]:
        return (float(self.k_raw.value), float(self.lambda_raw.value))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "k_raw": float(self.k_raw.value),
                "lambda_raw": float(self.lambda_raw.value),
                "k": self.k, "lambda": self.lam, "trainable": self.trainable}


StrengthDistribution = PointMass | LogNormal | Gamma


def distribution_from_dict(doc: dict) -> StrengthDistribution:
    variant = doc.get("variant")
    trainable = bool(doc.get("trainable", False))
    if variant == "pointmass":
        return PointMass(doc["beta"], trainable)
    if variant == "lognormal":
        return LogNormal(doc["mu"], doc["sigma_raw"], trainable)
    if variant == "gamma":
        return Gamma(doc["k_raw"], doc["lambda_raw"], trainable)
    raise ValueError(f"unknown distribution variant {variant!r}")


@dataclass(frozen=True)
class LossConfig:
    mc_samples: int = 16
    series: SeriesConfig = field(default_factory=SeriesConfig)
    rng_seed: int = 0
    shared_noise: bool = False  # one eps set per batch instead of per example

    def __post_init__(self) -> None:
        if self.mc_samples < 1:
            raise ValueError(f"mc_samples must be >= 1, got {self.mc_samples}")


def dpo_loss(delta_r: ad.Node, beta: float) -> ad.Node:
    """-log sigmoid(beta * dr), differentiable in dr."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return ad.softplus(ad.scale(delta_r, -float(beta)))


def lognormal_mixdpo_loss(delta_r: ad.Node, dist: LogNormal, cfg: LossConfig,
                          noise: np.ndarray) -> ad.Node:
    """-log[(1/K) sum_k sigmoid(exp(mu + sigma*eps_k) * dr)].

    The caller supplies the K standard-normal draws, which keeps the
    estimator reproducible and gradient checks exact per noise set.
    Evaluated as log K - logsumexp_k log_sigmoid(beta_k * dr) so the
    result stays finite however negative the arguments get.
    """
    eps = np.asarray(noise, dtype=float).reshape(-1)
    if eps.size == 0:
        raise ValueError("lognormal_mixdpo_loss needs at least one noise draw")
    sigma = ad.softplus(dist.sigma_raw)
    betas = ad.exp(ad.add(dist.mu, ad.mul(sigma, ad.constant(eps))))
    log_sig = ad.log_sigmoid(ad.mul(betas, delta_r))
    return ad.sub(ad.constant(math.log(eps.size)), ad.logsumexp(log_sig))


def _gamma_positive_branch(dr: float, k: float, lam: float,
                           series: SeriesConfig) -> tuple[float, float, float, float]:
    # E = 1 - x with x = c^k * phi(-1, k, 1+c), c = lam/dr (dr > 0).
    # The raw partials suffer catastrophic cancellation for large c, so
    # they are reorganized term-wise using a - c = 1 into series without
    # any cancellation:
    #   k*phi + c*phi_a = k * sum (-1)^n (n+1) (a+n)^(-k-1)        =: k*T
    #   ln(c)*phi + phi_s = -sum (-1)^n (a+n)^(-k) log1p((1+n)/c)  =: -U
    # giving d/d_dr = k c^k T / dr, d/dk = c^k U, d/d_lam = -k c^k T / lam.
    c = lam / dr
    a = 1.0 + c
    phi = specfn.lerch_phi_neg1(k, a, series)
    if phi <= 0.0 or not math.isfinite(phi):
        raise FloatingPointError(
            f"lerch series lost positivity at k={k}, a={a} (phi={phi})"
        )
    log_c = math.log(c)
    log_x = k * log_c + math.log(phi)
    if log_x < -700.0:  # x underflows: fully saturated, derivatives vanish
        return 1.0, 0.0, 0.0, 0.0
    x = math.exp(log_x)
    t_sum = specfn.alternating_sum(lambda n: (n + 1.0) * (a + n) ** (-k - 1.0))
    u_sum = specfn.alternating_sum(lambda n: np.log1p((1.0 + n) / c) * (a + n) ** (-k))
    ck_t = math.exp(k * log_c + math.log(t_sum)) if t_sum > 0 else c**k * t_sum
    ck_u = math.exp(k * log_c + math.log(u_sum)) if u_sum > 0 else c**k * u_sum
    d_dr = k * ck_t / dr
    d_k = ck_u
    d_lam = -k * ck_t / lam
    return 1.0 - x, d_dr, d_k, d_lam


def gamma_inner_expectation(
    delta_r: float, k: float, lam: float,
    series: SeriesConfig = specfn.DEFAULT_SERIES,
) -> tuple[float, float, float, float]:
    """E_{b~Gamma(k,lam)}[sigmoid(b*delta_r)] with analytic partials.

    Returns (value, d/d_delta_r, d/dk, d/d_lambda). |delta_r| below the
    switch radius returns exactly 1/2; the slope there is the one-sided
    closed form at the radius, matching the analytic limit k/(4*lam).
    """
    if k <= 0 or lam <= 0:
        raise ValueError(f"gamma parameters must be positive, got k={k}, lam={lam}")
    if abs(delta_r) < DELTA_R_SWITCH:
        _, d_dr, _, _ = _gamma_positive_branch(DELTA_R_SWITCH, k, lam, series)
        return 0.5, d_dr, 0.0, 0.0
    if delta_r > 0:
        return _gamma_positive_branch(delta_r, k, lam, series)
    value, d_dr, d_k, d_lam = _gamma_positive_branch(-delta_r, k, lam, series)
    return 1.0 - value, d_dr, -d_k, -d_lam


def gamma_mixdpo_loss(delta_r: ad.Node, dist: Gamma, cfg: LossConfig) -> ad.Node:
    """-log E_{b~Gamma}[sigmoid(b*dr)] via the closed form.

    The expectation enters the graph as a custom node carrying the
    analytic partials; softplus chains the gradients back to the raw
    shape/rate parameters when the distribution is trainable.
    """
    k_node = ad.softplus(dist.k_raw)
    lam_node = ad.softplus(dist.lambda_raw)
    value, d_dr, d_k, d_lam = gamma_inner_expectation(
        float(delta_r.value), float(k_node.value), float(lam_node.value), cfg.series
    )
    prob = ad.custom_node(value, [delta_r, k_node, lam_node], [d_dr, d_k, d_lam])
    return ad.scale(ad.log(prob), -1.0)


def pair_loss(delta_r: ad.Node, dist: StrengthDistribution, cfg: LossConfig,
              noise: np.ndarray | None = None) -> ad.Node:
    """Per-pair loss dispatched on the distribution variant."""
    if isinstance(dist, PointMass):
        return dpo_loss(delta_r, dist.beta)
    if isinstance(dist, LogNormal):
        if noise is None:
            raise ValueError("lognormal loss requires noise draws")
        return lognormal_mixdpo_loss(delta_r, dist, cfg, noise)
    if isinstance(dist, Gamma):
        return gamma_mixdpo_loss(delta_r, dist, cfg)
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def draw_batch_noise(n_pairs: int, cfg: LossConfig, rng: PCG32) -> np.ndarray:
    """Standard-normal draws for a lognormal batch: per-example rows, or a
    single shared row when ``cfg.shared_noise`` is set."""
    k = cfg.mc_samples
    if cfg.shared_noise:
        row = np.array([rng.normal() for _ in range(k)])
        return np.tile(row, (n_pairs, 1))
    return np.array([[rng.normal() for _ in range(k)] for _ in range(n_pairs)])


def batch_loss(pairs, policy, reference, dist: StrengthDistribution,
               cfg: LossConfig, noise: np.ndarray | None = None,
               ref_log_ratios: list[float] | None = None) -> ad.Node:
    """Mean per-pair loss over a batch.

    ``noise`` (lognormal only): [n_pairs, K] draws; generated from
    cfg.rng_seed when omitted. ``ref_log_ratios`` optionally supplies the
    precomputed frozen-reference log ratios (one per pair).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("batch_loss requires a non-empty batch")
    if isinstance(dist, LogNormal) and noise is None:
        noise = draw_batch_noise(len(pairs), cfg, PCG32(cfg.rng_seed, stream=11))
    total = None
    for i, pair in enumerate(pairs):
        if ref_log_ratios is not None:
            pol_w = model_mod.sequence_logprob(policy, pair.prompt, pair.chosen)
            pol_l = model_mod.sequence_logprob(policy, pair.prompt, pair.rejected)
            delta = ad.sub(ad.sub(pol_w, pol_l), ad.constant(ref_log_ratios[i]))
        else:
            delta = model_mod.implicit_reward_delta(policy, reference, pair)
        loss = pair_loss(delta, dist, cfg, None if noise is None else noise[i])
        total = loss if total is None else ad.add(total, loss)
    return ad.scale(total, 1.0 / len(pairs))
