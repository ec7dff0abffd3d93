"""
Risk estimators over bounded losses: supervised means, prediction-powered
(semi-supervised) means with a rectifier, and the variance-optimal reliance
weight on synthetic-label losses.

All losses are assumed to lie in [0, 1]. A prediction-powered estimate with
reliance weight ``eta`` lies in [-eta, 1 + eta] and can be mapped onto [0, 1]
with :func:`normalize_loss`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "LabeledLossPair",
    "StepBatch",
    "EtaPolicy",
    "RiskEstimate",
    "supervised_estimate",
    "ppi_estimate",
    "eta_star",
    "eta_adaptive",
    "eta_from_history_arrays",
    "normalize_loss",
    "denormalize_bound",
]


def _check_unit_interval(value: float, name: str) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value)):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class LabeledLossPair:
    """One labeled sample's true loss and its synthetic-label loss."""

    true_loss: float
    synth_loss: float

    def __post_init__(self) -> None:
        _check_unit_interval(self.true_loss, "true_loss")
        _check_unit_interval(self.synth_loss, "synth_loss")


@dataclass(frozen=True)
class StepBatch:
    """One time step's observations: labeled loss pairs plus unlabeled
    synthetic-label losses. The labeled part must be nonempty."""

    t: int
    labeled: tuple[LabeledLossPair, ...]
    unlabeled_synth: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.t < 1:
            raise ValueError(f"t must be a positive integer, got {self.t}")
        if len(self.labeled) == 0:
            raise ValueError("StepBatch requires at least one labeled sample")
        object.__setattr__(self, "labeled", tuple(self.labeled))
        object.__setattr__(self, "unlabeled_synth", tuple(self.unlabeled_synth))
        for i, v in enumerate(self.unlabeled_synth):
            _check_unit_interval(v, f"unlabeled_synth[{i}]")

    @property
    def n_labeled(self) -> int:
        return len(self.labeled)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled_synth)


@dataclass(frozen=True)
class EtaPolicy:
    """How the reliance weight on unlabeled data is chosen per step.

    ``fixed`` uses ``eta_fixed`` at every step. ``adaptive`` plugs windowed
    sample moments into the variance-optimal closed form, falling back to
    ``eta_init`` while the window holds fewer than two points. ``eta_max``
    clips every weight and fixes the normalization scale of the monitor.
    """

    mode: str = "adaptive"
    eta_fixed: float = 1.0
    eta_init: float = 1.0
    eta_max: float = 1.0
    window_l: int = 60

    def __post_init__(self) -> None:
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if self.eta_max < 0:
            raise ValueError("eta_max must be >= 0")
        for name in ("eta_fixed", "eta_init"):
            v = getattr(self, name)
            if not 0.0 <= v <= self.eta_max:
                raise ValueError(f"{name}={v} outside [0, eta_max={self.eta_max}]")
        if self.window_l < 1:
            raise ValueError("window_l must be >= 1")


@dataclass(frozen=True)
class RiskEstimate:
    """A per-step risk estimate together with the weight that produced it."""

    value: float
    eta_used: float
    n_labeled: int
    n_unlabeled: int


def supervised_estimate(batch: StepBatch) -> RiskEstimate:
    """Arithmetic mean of the true losses in the labeled part of ``batch``.

    Unlabeled values are ignored. Equivalent to :func:`ppi_estimate` with
    ``eta = 0``.
    """
    n = batch.n_labeled
    value = sum(p.true_loss for p in batch.labeled) / n
    return RiskEstimate(value=value, eta_used=0.0, n_labeled=n, n_unlabeled=batch.n_unlabeled)


def ppi_estimate(batch: StepBatch, eta: float, eta_max: float = 1.0) -> RiskEstimate:
    """Prediction-powered risk estimate for one step.

    Combines the synthetic-label mean on unlabeled data, weighted by ``eta``,
    with a rectifier computed on the labeled pairs that cancels the imputation
    bias:

        value = eta * mean(unlabeled synth)
                + mean(labeled true) - eta * mean(labeled synth)

    With an empty unlabeled batch the first term is defined as 0. The result
    lies in [-eta, 1 + eta] and is unbiased for the step risk for any fixed
    (or predictable) eta.
    """
    if not 0.0 <= eta <= eta_max:
        raise ValueError(f"eta={eta} outside [0, eta_max={eta_max}]")
    n = batch.n_labeled
    mean_true = sum(p.true_loss for p in batch.labeled) / n
    if eta == 0.0:
        value = mean_true
    else:
        mean_synth_lab = sum(p.synth_loss for p in batch.labeled) / n
        N = batch.n_unlabeled
        unlab_term = (sum(batch.unlabeled_synth) / N) if N > 0 else 0.0
        value = eta * unlab_term + mean_true - eta * mean_synth_lab
    return RiskEstimate(value=value, eta_used=eta, n_labeled=n, n_unlabeled=batch.n_unlabeled)


def eta_star(
    cov_u_usynth: float,
    var_usynth: float,
    n: int,
    N: int,
    eta_max: float = 1.0,
) -> float:
    """Variance-optimal reliance weight, clipped to [0, eta_max].

    Closed form:  cov(u, u_synth) / ((1 + n/N) * var(u_synth)).

    Degenerate inputs resolve to 0: a nonpositive covariance means the
    synthetic losses carry no usable signal, and zero variance makes the
    ratio undefined.
    """
    if var_usynth < 0:
        raise ValueError("var_usynth must be >= 0")
    if var_usynth == 0.0 or cov_u_usynth <= 0.0:
        return 0.0
    raw = cov_u_usynth / ((1.0 + n / N) * var_usynth)
    return min(max(raw, 0.0), eta_max)


def eta_from_history_arrays(
    true_arr: np.ndarray,
    synth_arr: np.ndarray,
    unlab_arr: np.ndarray,
    policy: EtaPolicy,
) -> float:
    """Array-backed core of :func:`eta_adaptive` (shared with the monitor)."""
    n = true_arr.size
    N = unlab_arr.size
    if n < 2 or N < 2:
        return min(policy.eta_init, policy.eta_max)
    cov = float(np.dot(true_arr - true_arr.mean(), synth_arr - synth_arr.mean()) / (n - 1))
    # a constant history has zero variance exactly; the centered computation
    # below can leave one-ulp residue that would explode the ratio instead
    if unlab_arr[0] == unlab_arr.min() == unlab_arr.max():
        return 0.0
    centered = unlab_arr - unlab_arr.mean()
    var = float(np.dot(centered, centered) / (N - 1))
    return eta_star(cov, var, n, N, eta_max=policy.eta_max)


def eta_adaptive(
    history_labeled: Sequence[LabeledLossPair],
    history_unlabeled: Sequence[float],
    policy: EtaPolicy,
) -> float:
    """Plug-in estimate of the variance-optimal weight from pre-step history.

    ``history_labeled`` and ``history_unlabeled`` must contain only data from
    strictly earlier steps, already truncated to the policy window by the
    caller; this function is agnostic to how the window was formed. Sample
    covariance/variance use the unbiased (n-1) denominator, so fewer than two
    points in either history falls back to ``policy.eta_init``.
    """
    n = len(history_labeled)
    true_arr = np.fromiter((p.true_loss for p in history_labeled), dtype=float, count=n)
    synth_arr = np.fromiter((p.synth_loss for p in history_labeled), dtype=float, count=n)
    unlab_arr = np.asarray(history_unlabeled, dtype=float)
    return eta_from_history_arrays(true_arr, synth_arr, unlab_arr, policy)


def normalize_loss(x: float, eta_max: float) -> float:
    """Affine map of [-eta_max, 1 + eta_max] onto [0, 1].

    Inverted exactly by :func:`denormalize_bound`. Values outside the domain
    (beyond a small float tolerance) raise a ValueError.
    """
    lo, hi = -eta_max, 1.0 + eta_max
    if x < lo - 1e-9 or x > hi + 1e-9:
        raise ValueError(f"x={x} outside [{lo}, {hi}]")
    y = (x + eta_max) / (1.0 + 2.0 * eta_max)
    return min(max(y, 0.0), 1.0)


def denormalize_bound(y: float, eta_max: float) -> float:
    """Exact inverse of :func:`normalize_loss`."""
    return (1.0 + 2.0 * eta_max) * y - eta_max
