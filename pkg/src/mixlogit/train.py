"""Joint optimization of policy parameters and strength-distribution
parameters, with separate learning rates and trajectory logging.

The update is RMSProp-style by default: a per-parameter EMA of squared
gradients divides the step, after the global gradient norm of the policy
parameters has been clipped. Distribution parameters are clipped
separately with the same max norm and stepped with their own learning
rate; beta_lr = 0 reproduces the fixed-parameter baselines exactly (the
raw parameters are never touched).

Everything is deterministic given (seed, config, data): batch shuffling
and Monte-Carlo noise come from dedicated PCG32 streams.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from . import objective
from .objective import LossConfig, StrengthDistribution
from .rng import PCG32

TRAJECTORY_HEADER = ["step", "loss", "beta_mean", "beta_variance",
                     "raw_param_1", "raw_param_2", "wallclock_ns"]


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"training aborted at step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    policy_lr: float = 1e-3  # desk-scale default; 5e-7 selectable for fidelity runs
    beta_lr: float = 1e-4  # 0 freezes the distribution (fixed baseline)
    batch_size: int = 64
    epochs: int = 1
    grad_clip_max_norm: float = 1.0
    optimizer: str = "rms"  # "rms" or "sgd"
    rms_decay: float = 0.99
    eval_every: int = 50
    rng_seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        if self.policy_lr < 0 or self.beta_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError(f"invalid batching config: {self}")
        if self.grad_clip_max_norm <= 0:
            raise ValueError("grad_clip_max_norm must be positive")
        if self.optimizer not in ("rms", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0.0 <= self.rms_decay < 1.0):
            raise ValueError(f"rms_decay must be in [0, 1), got {self.rms_decay}")


@dataclass
class TrajectoryPoint:
    step: int
    loss: float
    beta_mean: float
    beta_variance: float
    raw_params: tuple[float, ...]
    wallclock_ns: int


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale all gradients by max_norm/|g| when the joint L2 norm exceeds it."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    with np.errstate(over="ignore", invalid="ignore"):
        sq = sum(float(np.sum(g * g)) for g in grads)
    norm = math.sqrt(sq) if sq >= 0 else float("nan")
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return [g * factor for g in grads]


class _Optimizer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.sq_ema: dict[int, np.ndarray] = {}

    def step(self, params: list[ad.Node], grads: list[np.ndarray], lr: float) -> None:
        if lr == 0.0:
            return
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.cfg.optimizer == "sgd":
                p.value -= lr * g
                continue
            state = self.sq_ema.setdefault(i, np.zeros_like(p.value))
            state *= self.cfg.rms_decay
            state += (1.0 - self.cfg.rms_decay) * g * g
            p.value -= lr * g / (np.sqrt(state) + 1e-8)


def _snapshot(step: int, loss: float, dist: StrengthDistribution) -> TrajectoryPoint:
    raw = dist.raw_values()
    raw2 = (raw + (0.0, 0.0))[:2]
    return TrajectoryPoint(step=step, loss=loss, beta_mean=dist.mean(),
                           beta_variance=dist.variance(), raw_params=raw2,
                           wallclock_ns=time.perf_counter_ns())


def train(pairs, policy: model_mod.Model, reference: model_mod.Model,
          dist: StrengthDistribution, cfg: TrainConfig,
          ) -> tuple[model_mod.Model, StrengthDistribution, list[TrajectoryPoint]]:
    """Run the optimization loop in place; returns (policy, dist, trajectory)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("train requires non-empty data")
    if reference.trainable:
        raise ValueError("reference model must be frozen")

    shuffle_rng = PCG32(cfg.rng_seed, stream=101)
    noise_rng = PCG32(cfg.rng_seed, stream=102)
    policy_opt = _Optimizer(cfg)
    beta_opt = _Optimizer(cfg)

    # the reference is frozen, so its per-pair log ratio is a constant
    ref_ratio = {id(p): model_mod.reference_log_ratio_const(reference, p)
                 for p in pairs}

    dist_params = dist.raw_params() if dist.trainable else []
    trajectory: list[TrajectoryPoint] = []
    total_steps = cfg.epochs * ((len(pairs) + cfg.batch_size - 1) // cfg.batch_size)
    step = 0
    for _ in range(cfg.epochs):
        order = list(range(len(pairs)))
        shuffle_rng.shuffle(order)
        for lo in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[lo:lo + cfg.batch_size]]
            ratios = [ref_ratio[id(p)] for p in batch]
            noise = None
            if isinstance(dist, objective.LogNormal):
                noise = objective.draw_batch_noise(len(batch), cfg.loss, noise_rng)
            policy.zero_adjoints()
            for p in dist_params:
                p.zero_adjoint()
            step += 1
            try:
                loss_node = objective.batch_loss(batch, policy, reference, dist,
                                                 cfg.loss, noise=noise,
                                                 ref_log_ratios=ratios)
            except FloatingPointError as exc:
                raise TrainingAborted(step, str(exc)) from exc
            loss = float(loss_node.value)
            if not math.isfinite(loss):
                raise TrainingAborted(step, f"non-finite loss {loss}")
            ad.backward(loss_node)

            policy_params = [p for _, p in policy.parameters()]
            grads = [p.adjoint.copy() for p in policy_params]
            bgrads = [p.adjoint.copy() for p in dist_params]
            if any(not np.all(np.isfinite(g)) for g in grads + bgrads):
                raise TrainingAborted(step, "non-finite gradient")
            grads = clip_global_norm(grads, cfg.grad_clip_max_norm)
            policy_opt.step(policy_params, grads, cfg.policy_lr)
            if dist_params and cfg.beta_lr > 0:
                bgrads = clip_global_norm(bgrads, cfg.grad_clip_max_norm)
                beta_opt.step(dist_params, bgrads, cfg.beta_lr)

            if step == 1 or step == total_steps or step % cfg.eval_every == 0:
                trajectory.append(_snapshot(step, loss, dist))
    return policy, dist, trajectory


def write_trajectory_csv(trajectory: list[TrajectoryPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for pt in trajectory:
            writer.writerow([pt.step, repr(pt.loss), repr(pt.beta_mean),
                             repr(pt.beta_variance), repr(pt.raw_params[0]),
                             repr(pt.raw_params[1]), pt.wallclock_ns])


def read_trajectory_csv(path) -> list[TrajectoryPoint]:
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_HEADER:
            raise ValueError(f"unexpected trajectory header: {reader.fieldnames}")
        for row in reader:
            points.append(TrajectoryPoint(
                step=int(row["step"]), loss=float(row["loss"]),
                beta_mean=float(row["beta_mean"]),
                beta_variance=float(row["beta_variance"]),
                raw_params=(float(row["raw_param_1"]), float(row["raw_param_2"])),
                wallclock_ns=int(row["wallclock_ns"]),
            ))
    return points
