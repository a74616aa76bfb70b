"""Preference optimization with a learned random-coefficient strength.

Plain DPO treats every comparison with one fixed sensitivity; here the
sensitivity is a random variable from a learned distribution (point
mass, LogNormal via reparameterized Monte Carlo, or Gamma via a
closed-form expectation built on Hurwitz zeta functions), which lets the
objective capture heterogeneity in how strongly preferences are
expressed.
"""

from .datagen import GeneratorSpec, PreferencePair, generate
from .evaluate import MarginReport, build_report, preference_margin
from .model import Model, VocabConfig, init_policy_from, init_reference
from .objective import (
    Gamma,
    LogNormal,
    LossConfig,
    PointMass,
    batch_loss,
    dpo_loss,
    gamma_inner_expectation,
    gamma_mixdpo_loss,
    lognormal_mixdpo_loss,
)
from .specfn import SeriesConfig
from .train import TrainConfig, TrajectoryPoint

__all__ = [
    "GeneratorSpec", "PreferencePair", "generate",
    "MarginReport", "build_report", "preference_margin",
    "Model", "VocabConfig", "init_policy_from", "init_reference",
    "Gamma", "LogNormal", "LossConfig", "PointMass",
    "batch_loss", "dpo_loss", "gamma_inner_expectation",
    "gamma_mixdpo_loss", "lognormal_mixdpo_loss",
    "SeriesConfig", "TrainConfig", "TrajectoryPoint",
]

__version__ = "0.1.0"
