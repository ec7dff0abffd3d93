"""
Seeded generators of synthetic loss streams with controlled drift and
controlled agreement between true and synthetic losses.

Streams are reproducible across platforms: all randomness comes from numpy's
counter-based Philox generator keyed by the scenario seed, with a fixed
per-step draw order (labeled true losses, labeled agreement/noise draws,
unlabeled draws).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .estimators import LabeledLossPair, StepBatch

__all__ = [
    "ConstantSchedule",
    "StepSchedule",
    "RampSchedule",
    "PulseSchedule",
    "Schedule",
    "DriftScenario",
    "generate_stream",
    "generate_paired_streams",
    "true_running_risk",
]

_NOISE_SCALE = 0.15  # continuous-loss noise; rare clipping at mid-range means


@dataclass(frozen=True)
class ConstantSchedule:
    p: float

    def mean_at(self, t: int) -> float:
        return self.p


@dataclass(frozen=True)
class StepSchedule:
    """Mean jumps from p_before to p_after at t0 (inclusive)."""

    t0: int
    p_before: float
    p_after: float

    def mean_at(self, t: int) -> float:
        return self.p_after if t >= self.t0 else self.p_before


@dataclass(frozen=True)
class RampSchedule:
    """Mean interpolates linearly from p_before at t0 to p_after at t1."""

    t0: int
    t1: int
    p_before: float
    p_after: float

    def __post_init__(self) -> None:
        if self.t1 <= self.t0:
            raise ValueError("ramp requires t1 > t0")

    def mean_at(self, t: int) -> float:
        if t < self.t0:
            return self.p_before
        if t >= self.t1:
            return self.p_after
        frac = (t - self.t0) / (self.t1 - self.t0)
        return self.p_before + (self.p_after - self.p_before) * frac


@dataclass(frozen=True)
class PulseSchedule:
    """Mean sits at p_peak on [t0, t1] and at p_base elsewhere."""

    t0: int
    t1: int
    p_base: float
    p_peak: float

    def __post_init__(self) -> None:
        if self.t1 < self.t0:
            raise ValueError("pulse requires t1 >= t0")

    def mean_at(self, t: int) -> float:
        return self.p_peak if self.t0 <= t <= self.t1 else self.p_base


Schedule = Union[ConstantSchedule, StepSchedule, RampSchedule, PulseSchedule]


@dataclass(frozen=True)
class DriftScenario:
    """Generative description of one synthetic loss stream.

    ``agreement`` is the probability that a synthetic loss equals the true
    loss (bernoulli mode) or the correlation of their noise terms
    (bounded_continuous mode, where it may be negative).
    """

    schedule: Schedule
    loss_model: str = "bernoulli"
    agreement: float = 0.95
    n_per_step: int = 1
    N_per_step: int = 15
    horizon: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.loss_model not in ("bernoulli", "bounded_continuous"):
            raise ValueError(f"unknown loss_model {self.loss_model!r}")
        if self.loss_model == "bernoulli":
            if not 0.0 <= self.agreement <= 1.0:
                raise ValueError("agreement must lie in [0, 1] for bernoulli losses")
        elif not -1.0 <= self.agreement <= 1.0:
            raise ValueError("agreement (correlation) must lie in [-1, 1]")
        if self.n_per_step < 1:
            raise ValueError("n_per_step must be >= 1")
        if self.N_per_step < 0:
            raise ValueError("N_per_step must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for t in _schedule_times(self.schedule):
            if not 1 <= t <= self.horizon:
                raise ValueError(f"schedule time {t} outside [1, horizon={self.horizon}]")
        for p in _schedule_levels(self.schedule):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"schedule mean {p} outside [0, 1]")


def _schedule_times(schedule: Schedule) -> tuple[int, ...]:
    if isinstance(schedule, ConstantSchedule):
        return ()
    if isinstance(schedule, StepSchedule):
        return (schedule.t0,)
    return (schedule.t0, schedule.t1)


def _schedule_levels(schedule: Schedule) -> tuple[float, ...]:
    if isinstance(schedule, ConstantSchedule):
        return (schedule.p,)
    if isinstance(schedule, PulseSchedule):
        return (schedule.p_base, schedule.p_peak)
    return (schedule.p_before, schedule.p_after)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def _draw_step(
    scenario: DriftScenario, rng: np.random.Generator, p: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One step's (labeled true, labeled synth, unlabeled true, unlabeled synth)."""
    n, N = scenario.n_per_step, scenario.N_per_step
    if scenario.loss_model == "bernoulli":
        lab_true = (rng.random(n) < p).astype(float)
        lab_agree = rng.random(n) < scenario.agreement
        lab_synth = np.where(lab_agree, lab_true, 1.0 - lab_true)
        unl_true = (rng.random(N) < p).astype(float)
        unl_agree = rng.random(N) < scenario.agreement
        unl_synth = np.where(unl_agree, unl_true, 1.0 - unl_true)
    else:
        rho = scenario.agreement
        mix = np.sqrt(1.0 - rho * rho)
        g1 = rng.standard_normal(n)
        g2 = rng.standard_normal(n)
        lab_true = np.clip(p + _NOISE_SCALE * g1, 0.0, 1.0)
        lab_synth = np.clip(p + _NOISE_SCALE * (rho * g1 + mix * g2), 0.0, 1.0)
        h1 = rng.standard_normal(N)
        h2 = rng.standard_normal(N)
        unl_true = np.clip(p + _NOISE_SCALE * h1, 0.0, 1.0)
        unl_synth = np.clip(p + _NOISE_SCALE * (rho * h1 + mix * h2), 0.0, 1.0)
    return lab_true, lab_synth, unl_true, unl_synth


def _batch(t: int, lab_true: np.ndarray, lab_synth: np.ndarray, unl: np.ndarray) -> StepBatch:
    labeled = tuple(
        LabeledLossPair(true_loss=float(a), synth_loss=float(b))
        for a, b in zip(lab_true, lab_synth)
    )
    return StepBatch(t=t, labeled=labeled, unlabeled_synth=tuple(float(v) for v in unl))


def generate_stream(scenario: DriftScenario) -> list[StepBatch]:
    """Deterministic stream of StepBatch values for t = 1..horizon."""
    rng = _rng(scenario.seed)
    out = []
    for t in range(1, scenario.horizon + 1):
        p = scenario.schedule.mean_at(t)
        lab_true, lab_synth, _, unl_synth = _draw_step(scenario, rng, p)
        out.append(_batch(t, lab_true, lab_synth, unl_synth))
    return out


def generate_paired_streams(scenario: DriftScenario) -> tuple[list[StepBatch], list[StepBatch]]:
    """The stream plus its full-label-access twin, built from identical draws.

    The twin replaces every synthetic loss with the corresponding true loss
    (labeled pairs become (true, true); unlabeled values become the true
    losses), which is the idealized monitor's input.
    """
    rng = _rng(scenario.seed)
    stream, ideal = [], []
    for t in range(1, scenario.horizon + 1):
        p = scenario.schedule.mean_at(t)
        lab_true, lab_synth, unl_true, unl_synth = _draw_step(scenario, rng, p)
        stream.append(_batch(t, lab_true, lab_synth, unl_synth))
        ideal.append(_batch(t, lab_true, lab_true, unl_true))
    return stream, ideal


def true_running_risk(scenario: DriftScenario, t: int) -> float:
    """Analytic prefix average of the schedule's per-step means up to t."""
    if not 1 <= t <= scenario.horizon:
        raise ValueError(f"t={t} outside [1, horizon={scenario.horizon}]")
    total = 0.0
    for s in range(1, t + 1):
        total += scenario.schedule.mean_at(s)
    return total / t


def with_agreement(scenario: DriftScenario, agreement: float) -> DriftScenario:
    """Scenario copy at a different agreement level (same seed and schedule)."""
    return replace(scenario, agreement=agreement)
