"""Special functions for the closed-form Gamma preference-strength expectation.

Everything here is pure and deterministic. The two workhorses are the
Hurwitz zeta function

    zeta(s, a) = sum_{n=0}^inf (a + n)^(-s)

and the Lerch transcendent restricted to z = -1,

    phi_neg1(s, a) = sum_{n=0}^inf (-1)^n (a + n)^(-s)
                   = 2^(-s) * [zeta(s, a/2) - zeta(s, (a+1)/2)],

both under the standard index-from-zero convention.

zeta is evaluated by truncating the series at a configurable number of
terms. When ``tail_correction`` is on (the default) and s > 1, the
integral tail int_{a+N}^inf t^(-s) dt = (a+N)^(1-s)/(s-1) is added;
turning it off reproduces plain bare truncation. Partial derivatives
are exact derivatives of the truncated-plus-tail expression, so finite
differences of the value always agree with the analytic partials.

The zeta series only converges for s > 1, so for s <= 1.05 phi_neg1
switches to direct summation of the alternating series with repeated
averaging of partial sums (Euler transformation), which converges for
every s > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this s the zeta-difference route is abandoned for the direct
# alternating series (the zeta series itself diverges for s <= 1).
ALT_FALLBACK_THRESHOLD = 1.05

# Head/table sizes for the Euler-accelerated alternating sum. Fixed so
# the accelerated sum is a fixed linear functional of the terms, which
# keeps analytic partials exactly consistent with the computed value.
_ALT_DIRECT_TERMS = 64
_ALT_TABLE_TERMS = 48


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation settings for the zeta/Lerch series.

    truncation_terms: number of series terms kept (default 1000).
    tail_correction: add the integral tail when s > 1; disable to get
        bare truncation ("paper exact" mode).
    """

    truncation_terms: int = 1000
    tail_correction: bool = True

    def __post_init__(self) -> None:
        if self.truncation_terms < 1:
            raise ValueError(
                f"truncation_terms must be >= 1, got {self.truncation_terms}"
            )


DEFAULT_SERIES = SeriesConfig()


def sigmoid(z):
    """Logistic function 1/(1+exp(-z)), stable for any finite z.

    Computed as t = 1/(1+exp(-|z|)) in [1/2, 1) and reflected as 1-t for
    negative z; the reflection is exact in IEEE arithmetic (Sterbenz), so
    sigmoid(z) + sigmoid(-z) == 1 holds bit-exactly. Accepts scalars or
    numpy arrays.
    """
    z = np.asarray(z, dtype=float)
    t = 1.0 / (1.0 + np.exp(-np.abs(z)))
    out = np.where(z >= 0, t, 1.0 - t)
    # NaN propagates through np.where's comparison branch already
    if out.ndim == 0:
        return float(out)
    return out


def softplus(z):
    """log(1 + exp(z)) without overflow: max(z,0) + log1p(exp(-|z|))."""
    z = np.asarray(z, dtype=float)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    if out.ndim == 0:
        return float(out)
    return out


def softplus_derivative(z):
    """d/dz softplus(z) = sigmoid(z)."""
    return sigmoid(z)


def softplus_inverse(y: float) -> float:
    """Raw parameter producing softplus(raw) == y, for y > 0."""
    if y <= 0:
        raise ValueError(f"softplus_inverse requires y > 0, got {y}")
    # log(e^y - 1) = y + log(1 - e^-y)
    return y + math.log(-math.expm1(-y))


def log_sigmoid(z):
    """log(sigmoid(z)) = -softplus(-z); never underflows to -inf."""
    z = np.asarray(z, dtype=float)
    out = -(np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z))))
    if out.ndim == 0:
        return float(out)
    return out


def _check_domain(s: float, a: float) -> None:
    if not (s > 0):
        raise ValueError(f"zeta/lerch require s > 0, got s={s}")
    if not (a > 0):
        raise ValueError(f"zeta/lerch require a > 0, got a={a}")


def hurwitz_zeta(s: float, a: float, cfg: SeriesConfig = DEFAULT_SERIES) -> float:
    """Truncated Hurwitz zeta sum_{n=0}^{N-1} (a+n)^(-s), tail-corrected for s>1."""
    _check_domain(s, a)
    n = np.arange(cfg.truncation_terms, dtype=float)
    value = float(np.sum((a + n) ** (-s)))
    if cfg.tail_correction and s > 1.0:
        edge = a + cfg.truncation_terms
        value += edge ** (1.0 - s) / (s - 1.0)
    return value


def hurwitz_zeta_partials(
    s: float, a: float, cfg: SeriesConfig = DEFAULT_SERIES
) -> tuple[float, float]:
    """(d/ds, d/da) of hurwitz_zeta, differentiating the truncated
    expression term-wise, including the tail correction when present."""
    _check_domain(s, a)
    n = np.arange(cfg.truncation_terms, dtype=float)
    t = a + n
    logt = np.log(t)
    p = np.exp(-s * logt)  # t^(-s)
    d_s = float(-np.sum(logt * p))
    d_a = float(-s * np.sum(p / t))
    if cfg.tail_correction and s > 1.0:
        edge = a + cfg.truncation_terms
        log_edge = math.log(edge)
        pw = edge ** (1.0 - s)
        # d/ds [edge^(1-s)/(s-1)] and d/da [edge^(1-s)/(s-1)] = -edge^(-s)
        d_s += -pw * ((s - 1.0) * log_edge + 1.0) / (s - 1.0) ** 2
        d_a += -(edge**-s)
    return d_s, d_a


def alternating_sum(term_fn, n_direct: int = _ALT_DIRECT_TERMS,
                    n_table: int = _ALT_TABLE_TERMS) -> float:
    """sum_{n=0}^inf (-1)^n term_fn(n) via a direct head and repeated
    averaging of tail partial sums (Euler transformation).

    ``term_fn`` receives a numpy index array and must return the terms
    elementwise. The accelerated sum is a fixed linear functional of the
    terms, so term-wise derivative series evaluated the same way are
    exactly consistent with the value.
    """
    n = np.arange(n_direct + n_table, dtype=float)
    terms = np.asarray(term_fn(n), dtype=float)
    signs = np.where(np.arange(terms.size) % 2 == 0, 1.0, -1.0)
    head = float(np.dot(signs[:n_direct], terms[:n_direct]))
    tail_sign = float(signs[n_direct])
    work = list(np.cumsum(((-1.0) ** np.arange(n_table)) * terms[n_direct:]))
    for level in range(1, n_table):
        for i in range(n_table - level):
            work[i] = 0.5 * (work[i] + work[i + 1])
    return head + tail_sign * work[0]


def lerch_phi_neg1(s: float, a: float, cfg: SeriesConfig = DEFAULT_SERIES) -> float:
    """Phi(-1, s, a) = sum (-1)^n (a+n)^(-s).

    For s > 1.05 uses the Hurwitz zeta difference identity; below that
    the zeta series no longer converges and the alternating series is
    summed directly with Euler acceleration.
    """
    _check_domain(s, a)
    if s <= ALT_FALLBACK_THRESHOLD:
        return alternating_sum(lambda n: (a + n) ** (-s))
    return 2.0**-s * (
        hurwitz_zeta(s, a / 2.0, cfg) - hurwitz_zeta(s, (a + 1.0) / 2.0, cfg)
    )


def lerch_phi_neg1_partials(
    s: float, a: float, cfg: SeriesConfig = DEFAULT_SERIES
) -> tuple[float, float]:
    """(d/ds, d/da) of lerch_phi_neg1, exactly consistent with the value:
    both routes differentiate the same truncated/accelerated expression."""
    _check_domain(s, a)
    if s <= ALT_FALLBACK_THRESHOLD:
        d_s = -alternating_sum(lambda n: np.log(a + n) * (a + n) ** (-s))
        d_a = -s * alternating_sum(lambda n: (a + n) ** (-s - 1.0))
        return d_s, d_a
    half = 2.0**-s
    z1 = hurwitz_zeta(s, a / 2.0, cfg)
    z2 = hurwitz_zeta(s, (a + 1.0) / 2.0, cfg)
    z1_s, z1_a = hurwitz_zeta_partials(s, a / 2.0, cfg)
    z2_s, z2_a = hurwitz_zeta_partials(s, (a + 1.0) / 2.0, cfg)
    value = half * (z1 - z2)
    d_s = -math.log(2.0) * value + half * (z1_s - z2_s)
    d_a = half * 0.5 * (z1_a - z2_a)
    return d_s, d_a
