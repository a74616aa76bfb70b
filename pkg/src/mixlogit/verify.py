"""Self-check suites behind the ``verify`` CLI command.

Each check recomputes a quantity along two independent routes (closed
form vs adaptive quadrature, analytic gradients vs central finite
differences, accelerated series vs identity transformations, Monte Carlo
vs deterministic expectation) and reports the worst disagreement. The
"quick" level trims grid sizes to stay under half a minute; "full" runs
acceptance-grade grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import autodiff as ad
from . import model as model_mod
from . import objective
from . import specfn
from .datagen import PreferencePair
from .model import VocabConfig
from .objective import Gamma, LogNormal, LossConfig, PointMass
from .rng import PCG32
from .specfn import SeriesConfig


@dataclass
class CheckResult:
    name: str
    max_error: float
    bound: float | None  # None: report-only
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.bound is None or self.max_error <= self.bound

    def line(self) -> str:
        status = "report" if self.bound is None else ("PASS" if self.passed else "FAIL")
        bound = "" if self.bound is None else f" (bound {self.bound:g})"
        detail = f"  [{self.detail}]" if self.detail else ""
        return f"[{status:>6}] {self.name}: max error {self.max_error:.3e}{bound}{detail}"


def gamma_quadrature(delta_r: float, k: float, lam: float) -> float:
    """Adaptive quadrature of int_0^inf sigmoid(b*dr) Gamma(b; k, lam) db."""
    log_norm = k * math.log(lam) - math.lgamma(k)

    def integrand(b: float) -> float:
        if b <= 0.0:
            return 0.0
        return specfn.sigmoid(b * delta_r) * math.exp(
            log_norm + (k - 1.0) * math.log(b) - lam * b
        )

    mean = k / lam
    cuts = sorted({mean * f for f in (0.25, 1.0, 4.0)})
    value, _ = integrate.quad(integrand, 0.0, cuts[-1], points=cuts[:-1], limit=200)
    tail, _ = integrate.quad(integrand, cuts[-1], np.inf, limit=200)
    return value + tail


def lognormal_quadrature(delta_r: float, mu: float, sigma: float) -> float:
    """E[sigmoid(exp(x)*dr)] for x ~ Normal(mu, sigma^2), in log space."""

    def integrand(x: float) -> float:
        z = (x - mu) / sigma
        return specfn.sigmoid(math.exp(x) * delta_r) * math.exp(-0.5 * z * z) / (
            sigma * math.sqrt(2.0 * math.pi)
        )

    value, _ = integrate.quad(integrand, mu - 12 * sigma, mu + 12 * sigma, limit=200)
    return value


def acceptance_grid(n_k: int = 5, n_lam: int = 5, n_dr: int = 9):
    ks = np.linspace(0.7, 5.0, n_k)
    lams = np.linspace(1.0, 50.0, n_lam)
    drs = np.linspace(-10.0, 10.0, n_dr)
    return [(k, lam, dr) for k in ks for lam in lams for dr in drs]


def check_closed_form_vs_quadrature(level: str) -> list[CheckResult]:
    grid = acceptance_grid() if level == "full" else acceptance_grid(3, 3, 5)
    cfg_default = SeriesConfig()
    cfg_bare = SeriesConfig(tail_correction=False)
    worst_default = 0.0
    worst_bare = 0.0
    for k, lam, dr in grid:
        ref = gamma_quadrature(dr, k, lam)
        got, _, _, _ = objective.gamma_inner_expectation(dr, k, lam, cfg_default)
        worst_default = max(worst_default, abs(got - ref))
        got_bare, _, _, _ = objective.gamma_inner_expectation(dr, k, lam, cfg_bare)
        worst_bare = max(worst_bare, abs(got_bare - ref))
    return [
        CheckResult("closed form vs quadrature", worst_default, 1e-4,
                    f"{len(grid)} grid points"),
        # bare truncation exceeds the nominal 5e-5 target at grid corners
        # with large lambda/|dr|; reported, not gated (see README)
        CheckResult("closed form vs quadrature, bare truncation n=1000",
                    worst_bare, None, f"{len(grid)} grid points"),
    ]


def check_special_function_identities(level: str) -> list[CheckResult]:
    cfg = SeriesConfig(truncation_terms=10_000)
    s_grid = [1.5, 2.0, 3.0, 5.0]
    a_grid = [0.5, 1.0, 2.7, 10.0, 50.0]

    worst_shift = 0.0
    for s in s_grid:
        for a in a_grid:
            lhs = specfn.hurwitz_zeta(s, a, cfg)
            rhs = a**-s + specfn.hurwitz_zeta(s, a + 1.0, cfg)
            worst_shift = max(worst_shift, abs(lhs - rhs))

    worst_alt = 0.0
    for s in [0.5, 0.8, 1.0, 1.5, 2.5, 5.0]:
        for a in a_grid:
            lhs = specfn.lerch_phi_neg1(s, a) + specfn.lerch_phi_neg1(s, a + 1.0)
            worst_alt = max(worst_alt, abs(lhs - a**-s))

    # Lerch via the zeta-difference identity against direct Euler-accelerated
    # alternating summation on a 20-point grid of (s, a) in [0.5,5]x[0.5,50]
    worst_reduction = 0.0
    for s in np.linspace(0.5, 5.0, 4):
        for a in np.linspace(0.5, 50.0, 5):
            via_module = specfn.lerch_phi_neg1(float(s), float(a))
            direct = _alternating_reference(float(s), float(a))
            worst_reduction = max(worst_reduction, abs(via_module - direct))

    worst_mono = 0.0  # negated margin; must stay below 0
    for s in [0.7, 1.3, 2.0, 4.0]:
        values = [specfn.hurwitz_zeta(s, a, cfg) if s > 1
                  else specfn.lerch_phi_neg1(s, a)
                  for a in np.linspace(0.5, 20.0, 12)]
        diffs = np.diff(values)
        worst_mono = max(worst_mono, float(np.max(diffs)))

    return [
        CheckResult("hurwitz shift identity", worst_shift, 1e-9),
        CheckResult("alternating shift identity", worst_alt, 1e-8),
        CheckResult("zeta-difference reduction vs direct sum", worst_reduction, 1e-6),
        CheckResult("monotonic decrease in a", worst_mono, 0.0),
    ]


def _alternating_reference(s: float, a: float, terms: int = 10_000,
                           table: int = 64) -> float:
    """Direct Euler-accelerated alternating sum with a long head; written
    against the definition, not via the zeta identity."""
    n_head = terms - table
    n = np.arange(terms, dtype=float)
    t = (a + n) ** (-s)
    signs = np.where(np.arange(terms) % 2 == 0, 1.0, -1.0)
    head = float(np.sum(signs[:n_head] * t[:n_head]))
    # partial-sum averaging over the last `table` terms
    partial = np.cumsum(((-1.0) ** np.arange(table)) * t[n_head:])
    work = list(partial)
    for _ in range(table - 1):
        work = [0.5 * (work[i] + work[i + 1]) for i in range(len(work) - 1)]
    return head + float(signs[n_head]) * work[0]


def _fd_gradient(fn, x: float, h: float = 1e-5) -> float:
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def _rel_err(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), 1e-2)  # 1e-6/1e-4 absolute floor
    return abs(analytic - numeric) / scale


def _tiny_fixture(seed: int):
    vocab = VocabConfig(vocab_size=2, max_prompt_len=3, max_response_len=4)
    reference = model_mod.init_reference(vocab, hidden_dim=4, seed=seed, std=0.3)
    policy = model_mod.init_policy_from(reference)
    rng = PCG32(seed, stream=5)
    for _, p in policy.parameters():
        p.value += 0.1 * np.array([rng.normal() for _ in range(p.value.size)]
                                  ).reshape(p.value.shape)
    pair = PreferencePair(prompt=[0, 1], chosen=[1, 0, 1], rejected=[0, 0])
    return policy, reference, pair


def _loss_for_variant(variant: str, delta: ad.Node, dists: dict,
                      noise: np.ndarray) -> ad.Node:
    cfg = LossConfig(mc_samples=noise.size)
    if variant == "dpo":
        return objective.dpo_loss(delta, 0.1)
    if variant == "lognormal":
        return objective.lognormal_mixdpo_loss(delta, dists["lognormal"], cfg, noise)
    return objective.gamma_mixdpo_loss(delta, dists["gamma"], cfg)


def check_gradients(level: str) -> list[CheckResult]:
    n_seeds = 100 if level == "full" else 20
    worst = 0.0
    for seed in range(n_seeds):
        rng = PCG32(1000 + seed)
        dr0 = (rng.uniform() * 8.0 - 4.0)
        if abs(dr0) < 1e-3:
            dr0 = 0.5
        params = {
            "lognormal": LogNormal(mu=rng.uniform() * 2 - 3,
                                   sigma_raw=rng.uniform() * 2 - 1, trainable=True),
            "gamma": Gamma(k_raw=rng.uniform() * 3 + 0.2,
                           lambda_raw=rng.uniform() * 4 + 0.5, trainable=True),
        }
        noise = np.array([rng.normal() for _ in range(8)])
        for variant in ("dpo", "lognormal", "gamma"):
            # d(loss)/d(delta_r)
            def loss_at(dr: float) -> float:
                return float(_loss_for_variant(
                    variant, ad.Node(dr), params, noise).value)

            delta = ad.Node(dr0, requires_grad=True)
            node = _loss_for_variant(variant, delta, params, noise)
            for p in params.values():
                for raw in p.raw_params():
                    raw.zero_adjoint()
            ad.backward(node)
            worst = max(worst, _rel_err(float(delta.adjoint),
                                        _fd_gradient(loss_at, dr0)))
            # d(loss)/d(raw distribution params)
            if variant in params:
                for raw in params[variant].raw_params():
                    x0 = float(raw.value)

                    def loss_at_raw(x: float) -> float:
                        raw.value[...] = x
                        out = float(_loss_for_variant(
                            variant, ad.Node(dr0), params, noise).value)
                        raw.value[...] = x0
                        return out

                    worst = max(worst, _rel_err(float(raw.adjoint),
                                                _fd_gradient(loss_at_raw, x0)))
    # policy-parameter gradients through the full pipeline on a 2-token fixture
    n_policy_seeds = 10 if level == "full" else 3
    cfg = LossConfig(mc_samples=4)
    for seed in range(n_policy_seeds):
        policy, reference, pair = _tiny_fixture(seed)
        noise = np.array([[0.3, -0.8, 1.1, -0.2]])
        for dist in (PointMass(0.1),
                     LogNormal(mu=-2.3, sigma_raw=0.0, trainable=True),
                     Gamma.from_effective(2.0, 16.7, trainable=True)):
            policy.zero_adjoints()
            loss = objective.batch_loss([pair], policy, reference, dist, cfg,
                                        noise=noise)
            ad.backward(loss)
            for _, p in policy.parameters():
                flat = p.value.reshape(-1)
                for idx in range(flat.size):
                    x0 = flat[idx]

                    def loss_at_param(x: float) -> float:
                        flat[idx] = x
                        out = float(objective.batch_loss(
                            [pair], policy, reference, dist, cfg, noise=noise
                        ).value)
                        flat[idx] = x0
                        return out

                    worst = max(worst, _rel_err(float(p.adjoint.reshape(-1)[idx]),
                                                _fd_gradient(loss_at_param, x0)))
    return [CheckResult("gradient fidelity vs finite differences", worst, 1e-4,
                        f"{n_seeds} loss seeds, {n_policy_seeds} policy fixtures")]


def check_mc_consistency(level: str) -> list[CheckResult]:
    rng = np.random.default_rng(20240811)
    n_triples = 50 if level == "full" else 10

    # lognormal: MC inner probability vs quadrature, 3 standard errors
    worst_ln = 0.0
    n_sets, k_draws = (50, 4096) if level == "full" else (20, 1024)
    for mu, sigma, dr in [(-2.3, 0.6, 5.0), (-1.0, 0.3, -2.0), (0.0, 0.8, 1.0),
                          (-2.0, 1.2, 8.0), (-3.0, 0.5, -6.0)]:
        ref = lognormal_quadrature(dr, mu, sigma)
        estimates = []
        for _ in range(n_sets):
            eps = rng.standard_normal(k_draws)
            estimates.append(float(np.mean(specfn.sigmoid(np.exp(mu + sigma * eps) * dr))))
        mean = float(np.mean(estimates))
        se = float(np.std(estimates, ddof=1)) / math.sqrt(n_sets)
        worst_ln = max(worst_ln, abs(mean - ref) / max(se, 1e-300) / 3.0)

    # gamma: raw-draw MC vs the closed form, 4 standard errors
    worst_g = 0.0
    n_draws = 100_000
    for _ in range(n_triples):
        k = rng.uniform(0.7, 5.0)
        lam = rng.uniform(1.0, 50.0)
        dr = rng.uniform(-10.0, 10.0)
        draws = rng.gamma(shape=k, scale=1.0 / lam, size=n_draws)
        vals = specfn.sigmoid(draws * dr)
        mc = float(np.mean(vals))
        se = float(np.std(vals, ddof=1)) / math.sqrt(n_draws)
        closed, _, _, _ = objective.gamma_inner_expectation(dr, k, lam)
        worst_g = max(worst_g, abs(mc - closed) / max(se, 1e-300) / 4.0)

    return [
        CheckResult("lognormal MC vs quadrature (3 SE units)", worst_ln, 1.0,
                    f"{n_sets} noise sets of K={k_draws}"),
        CheckResult("gamma MC vs closed form (4 SE units)", worst_g, 1.0,
                    f"{n_triples} triples of {n_draws} draws"),
    ]


def run_checks(level: str = "quick") -> list[CheckResult]:
    if level not in ("quick", "full"):
        raise ValueError(f"level must be 'quick' or 'full', got {level!r}")
    results = []
    results += check_special_function_identities(level)
    results += check_closed_form_vs_quadrature(level)
    results += check_gradients(level)
    results += check_mc_consistency(level)
    return results
