"""
Online risk monitors. Each monitor consumes per-step batches, maintains an
anytime-valid lower confidence bound on the running test risk, and latches an
alarm once that bound exceeds the calibrated source-risk upper bound plus the
tolerance. One monitor instance is a strictly sequential state machine;
independent instances may run concurrently.

Three monitor families share this module: the supervised/prediction-powered
monitor (PPRM generalizes SRM; SRM is the eta = 0, eta_max = 0 case), and the
unsupervised monitor (URM) driven by label-free loss proxies.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bounds import (
    BettingSpec,
    ConfidenceSequenceSpec,
    MixtureRadiusSolver,
    VarianceProcess,
    betting_upper_bound,
    blockwise_ppi_values,
    hoeffding_radius,
    variance_process_update,
)
from .estimators import (
    EtaPolicy,
    LabeledLossPair,
    StepBatch,
    denormalize_bound,
    eta_from_history_arrays,
    normalize_loss,
    ppi_estimate,
)

_EMPTY = np.empty(0, dtype=float)

__all__ = [
    "SequencingError",
    "CalibrationError",
    "MonitorConfig",
    "SourceCalibration",
    "BoundTrace",
    "MonitorState",
    "Monitor",
    "monitor_step",
    "new_state",
    "calibrate_source",
    "first_alarm_time",
    "UrmCalibration",
    "UrmState",
    "urm_calibrate",
    "calibrate_urm",
    "urm_step",
    "UrmMonitor",
]

HOEFFDING_LABELED_ONLY = "hoeffding_labeled_only"
BETTING_PPI = "betting_ppi"


class SequencingError(ValueError):
    """Batch time indices arrived out of order."""


class CalibrationError(ValueError):
    """Source calibration could not be completed."""


@dataclass(frozen=True)
class MonitorConfig:
    """Risk budgets, tolerance, and numerical settings for one monitor.

    ``delta_s`` guards the source upper bound, ``delta_t`` the test-side
    confidence sequence; their sum is the overall false-alarm budget and must
    lie in (0, 1). ``initial_predictor`` seeds the variance process before the
    first step (midpoint of the normalized range by default; may be set to
    the normalized source estimate).
    """

    delta_s: float = 0.05
    delta_t: float = 0.2
    eps_tol: float = 0.05
    eta_policy: EtaPolicy = field(default_factory=EtaPolicy)
    cs_spec: ConfidenceSequenceSpec = field(default_factory=ConfidenceSequenceSpec)
    betting_spec: BettingSpec = field(default_factory=BettingSpec)
    source_bound_method: str = BETTING_PPI
    initial_predictor: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_s + self.delta_t < 1.0:
            raise ValueError("delta_s + delta_t must lie in (0, 1)")
        if self.eps_tol <= 0:
            raise ValueError("eps_tol must be > 0")
        if self.source_bound_method not in (HOEFFDING_LABELED_ONLY, BETTING_PPI):
            raise ValueError(f"unknown source_bound_method {self.source_bound_method!r}")
        if self.cs_spec.delta_t != self.delta_t:
            raise ValueError("cs_spec.delta_t must match config delta_t")
        if self.betting_spec.delta_s != self.delta_s:
            raise ValueError("betting_spec.delta_s must match config delta_s")
        if not 0.0 <= self.initial_predictor <= 1.0:
            raise ValueError("initial_predictor must lie in [0, 1]")

    @classmethod
    def create(
        cls,
        delta_s: float = 0.05,
        delta_t: float = 0.2,
        eps_tol: float = 0.05,
        eta_policy: Optional[EtaPolicy] = None,
        source_bound_method: str = BETTING_PPI,
        cs_spec: Optional[ConfidenceSequenceSpec] = None,
        betting_spec: Optional[BettingSpec] = None,
        initial_predictor: float = 0.5,
    ) -> "MonitorConfig":
        """Build a config with the sub-specs wired to the given budgets."""
        cs = replace(cs_spec or ConfidenceSequenceSpec(), delta_t=delta_t)
        bet = replace(betting_spec or BettingSpec(), delta_s=delta_s)
        return cls(
            delta_s=delta_s,
            delta_t=delta_t,
            eps_tol=eps_tol,
            eta_policy=eta_policy or EtaPolicy(),
            cs_spec=cs,
            betting_spec=bet,
            source_bound_method=source_bound_method,
            initial_predictor=initial_predictor,
        )


@dataclass(frozen=True)
class SourceCalibration:
    """Point estimate and high-probability upper bound of the source risk."""

    estimate: float
    upper_bound: float
    n0: int
    N0: int
    eta0: float
    method: str = HOEFFDING_LABELED_ONLY


@dataclass(frozen=True)
class BoundTrace:
    """One output row per monitoring step."""

    t: int
    step_estimate: float
    running_estimate: float
    lower_bound: float
    upper_bound_source: float
    eta_t: float
    v_t: float
    alarm: bool


@dataclass
class MonitorState:
    """Evolving sufficient statistics of one monitor (single writer)."""

    t: int = 0
    estimate_sum: float = 0.0
    variance_process: VarianceProcess = field(default_factory=VarianceProcess)
    lower_bound: float = -math.inf
    alarm_latched: bool = False
    eta_history: deque = field(default_factory=deque)
    labeled_window: deque = field(default_factory=deque)
    unlabeled_window: deque = field(default_factory=deque)
    solver: Optional[MixtureRadiusSolver] = None


def new_state(config: MonitorConfig) -> MonitorState:
    window = config.eta_policy.window_l
    return MonitorState(
        variance_process=VarianceProcess(last_running_mean=config.initial_predictor),
        eta_history=deque(maxlen=window),
        labeled_window=deque(maxlen=window),
        unlabeled_window=deque(maxlen=window),
        solver=MixtureRadiusSolver(config.cs_spec),
    )


def _concat(chunks: Sequence[np.ndarray]) -> np.ndarray:
    if not chunks:
        return _EMPTY
    return np.concatenate(chunks)


def _select_eta(state: MonitorState, batch: StepBatch, policy: EtaPolicy) -> float:
    """Reliance weight for this step, a function of pre-step data only.

    The sliding windows hold per-step value arrays; concatenating them gives
    the same flat history (same values, same order) that
    :func:`riskmon.estimators.eta_adaptive` sees, so an offline recomputation
    from logged pre-step data reproduces the weight bit for bit.
    """
    if batch.n_unlabeled == 0:
        return 0.0
    if policy.mode == "fixed":
        return policy.eta_fixed
    true_arr = _concat([c[0] for c in state.labeled_window])
    synth_arr = _concat([c[1] for c in state.labeled_window])
    unlab_arr = _concat(list(state.unlabeled_window))
    return eta_from_history_arrays(true_arr, synth_arr, unlab_arr, policy)


def monitor_step(
    state: MonitorState,
    batch: StepBatch,
    calib: SourceCalibration,
    config: MonitorConfig,
) -> tuple[MonitorState, BoundTrace]:
    """Advance the monitor by one batch and emit the trace row.

    The batch joins the sliding eta-estimation windows only after this step's
    eta has been fixed, so the weight sequence stays predictable. Steps after
    the alarm has latched still update every bound and emit rows.
    """
    if batch.t != state.t + 1:
        raise SequencingError(f"expected batch t={state.t + 1}, got t={batch.t}")
    if state.solver is None:
        state.solver = MixtureRadiusSolver(config.cs_spec)
    policy = config.eta_policy
    eta_max = policy.eta_max

    eta_t = _select_eta(state, batch, policy)
    est = ppi_estimate(batch, eta_t, eta_max=eta_max).value
    z = normalize_loss(est, eta_max)
    state.variance_process = variance_process_update(state.variance_process, z)

    t = batch.t
    state.t = t
    state.estimate_sum += est
    running = state.estimate_sum / t
    radius = state.solver.radius(state.variance_process.v)
    lower = denormalize_bound(normalize_loss(running, eta_max) - radius / t, eta_max)
    state.lower_bound = lower
    if lower > calib.upper_bound + config.eps_tol:
        state.alarm_latched = True

    state.eta_history.append(eta_t)
    if policy.mode == "adaptive":
        n = batch.n_labeled
        state.labeled_window.append(
            (
                np.fromiter((p.true_loss for p in batch.labeled), dtype=float, count=n),
                np.fromiter((p.synth_loss for p in batch.labeled), dtype=float, count=n),
            )
        )
        state.unlabeled_window.append(np.asarray(batch.unlabeled_synth, dtype=float))

    trace = BoundTrace(
        t=t,
        step_estimate=est,
        running_estimate=running,
        lower_bound=lower,
        upper_bound_source=calib.upper_bound,
        eta_t=eta_t,
        v_t=state.variance_process.v,
        alarm=state.alarm_latched,
    )
    return state, trace


class Monitor:
    """Convenience wrapper tying a state to its calibration and config."""

    def __init__(self, calib: SourceCalibration, config: MonitorConfig):
        self.calib = calib
        self.config = config
        self.state = new_state(config)

    def step(self, batch: StepBatch) -> BoundTrace:
        self.state, trace = monitor_step(self.state, batch, self.calib, self.config)
        return trace

    def run(self, stream: Sequence[StepBatch]) -> list[BoundTrace]:
        return [self.step(batch) for batch in stream]


def calibrate_source(
    labeled: Sequence[LabeledLossPair],
    unlabeled_synth: Sequence[float],
    config: MonitorConfig,
) -> SourceCalibration:
    """Source-risk estimate and upper bound from pre-deployment data.

    ``hoeffding_labeled_only`` uses the labeled mean plus a Hoeffding radius
    at delta_s. ``betting_ppi`` forms block-wise prediction-powered values
    from labeled and unlabeled data and runs the betting upper bound over
    their support; with an informative predictor this is typically tighter.
    """
    n0 = len(labeled)
    if n0 == 0:
        raise CalibrationError("source calibration requires labeled data")
    N0 = len(unlabeled_synth)
    if config.source_bound_method == HOEFFDING_LABELED_ONLY:
        est = sum(p.true_loss for p in labeled) / n0
        upper = est + hoeffding_radius(n0, config.delta_s)
        return SourceCalibration(
            estimate=est, upper_bound=upper, n0=n0, N0=N0, eta0=0.0,
            method=HOEFFDING_LABELED_ONLY,
        )
    policy = config.eta_policy
    eta0 = policy.eta_fixed if policy.mode == "fixed" else policy.eta_init
    if N0 == 0:
        eta0 = 0.0
    z = blockwise_ppi_values(labeled, unlabeled_synth, eta0)
    est = sum(z) / len(z)
    lo, hi = -eta0, 1.0 + eta0
    upper = betting_upper_bound(z, (lo, hi), config.betting_spec)
    return SourceCalibration(
        estimate=est, upper_bound=upper, n0=n0, N0=N0, eta0=eta0, method=BETTING_PPI,
    )


def first_alarm_time(trace: Sequence[BoundTrace]) -> Optional[int]:
    """Smallest t whose row has the alarm set, or None if never raised."""
    for row in trace:
        if row.alarm:
            return row.t
    return None


# ---------------------------------------------------------------------------
# Unsupervised risk monitoring (URM)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UrmCalibration:
    """Thresholds and source-side bounds for the unsupervised monitor.

    ``tau`` is the loss threshold, ``beta0`` the proxy threshold (held fixed
    during monitoring), and ``pfp0_ucb`` an upper confidence bound on the
    source probability of a proxy exceedance without a loss exceedance.
    """

    tau: float
    beta0: float
    pfp0_ucb: float
    source_estimate: float
    source_upper_bound: float
    n0: int


def _threshold_candidates(values: np.ndarray) -> np.ndarray:
    """Empirical quantiles plus midpoints between consecutive distinct levels.

    Midpoints keep discrete data (e.g. 0-1 losses) from forcing degenerate
    thresholds at the support endpoints.
    """
    qs = np.quantile(values, np.linspace(0.05, 0.95, 19))
    levels = np.unique(qs)
    if levels.size > 1:
        mids = 0.5 * (levels[:-1] + levels[1:])
        levels = np.unique(np.concatenate([levels, mids]))
    return levels


def urm_calibrate(
    source_proxies: Sequence[float],
    source_losses: Sequence[float],
    delta: float = 0.025,
) -> tuple[float, float, float]:
    """Select (tau, beta0) by F1 grid search and bound the source PFP rate.

    Candidate thresholds are drawn from empirical quantiles (with midpoints)
    of the losses and proxies; the pair maximizing the F1 score of the
    proxy-exceedance event predicting the loss-exceedance event wins, with
    ties broken toward larger tau, then larger beta. ``pfp0_ucb`` adds a
    Hoeffding radius at ``delta`` to the empirical exceedance-without-loss
    rate.
    """
    proxies = np.asarray(source_proxies, dtype=float)
    losses = np.asarray(source_losses, dtype=float)
    if proxies.size == 0 or proxies.size != losses.size:
        raise CalibrationError("proxies and losses must be nonempty and equal length")
    if np.ptp(proxies) == 0.0:
        raise CalibrationError("constant proxies cannot be calibrated")

    taus = _threshold_candidates(losses)
    betas = _threshold_candidates(proxies)
    loss_exc = losses[None, :] > taus[:, None]          # (T, n)
    proxy_exc = proxies[None, :] > betas[:, None]       # (B, n)
    tp = loss_exc.astype(float) @ proxy_exc.T.astype(float)   # (T, B)
    pos = loss_exc.sum(axis=1, keepdims=True)                 # (T, 1)
    pred = proxy_exc.sum(axis=1)[None, :]                     # (1, B)
    denom = pos + pred
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / denom, 0.0)
    valid = (pos > 0) & (pos < losses.size)
    f1 = np.where(valid, f1, -1.0)
    if not (f1 > -1.0).any():
        raise CalibrationError("no usable loss threshold splits the source sample")

    best = f1.max()
    ti, bi = np.nonzero(f1 >= best - 1e-12)
    order = np.lexsort((betas[bi], taus[ti]))
    tau = float(taus[ti[order[-1]]])
    beta0 = float(betas[bi[order[-1]]])

    pfp_emp = float(np.mean((proxies > beta0) & (losses <= tau)))
    pfp0_ucb = pfp_emp + hoeffding_radius(losses.size, delta)
    return tau, beta0, pfp0_ucb


def calibrate_urm(
    source_losses: Sequence[float],
    source_proxies: Sequence[float],
    config: MonitorConfig,
) -> UrmCalibration:
    """Full URM calibration: thresholds plus the source-risk upper bound.

    The delta_s budget is split evenly between the PFP upper bound and the
    source-risk Hoeffding bound, so the total URM false-alarm budget stays at
    delta_s + delta_t.
    """
    half = config.delta_s / 2.0
    tau, beta0, pfp0_ucb = urm_calibrate(source_proxies, source_losses, delta=half)
    losses = np.asarray(source_losses, dtype=float)
    est = float(losses.mean())
    upper = est + hoeffding_radius(losses.size, half)
    return UrmCalibration(
        tau=tau, beta0=beta0, pfp0_ucb=pfp0_ucb,
        source_estimate=est, source_upper_bound=upper, n0=losses.size,
    )


@dataclass
class UrmState:
    """Evolving statistics of the unsupervised monitor (single writer)."""

    t: int = 0
    exceed_sum: float = 0.0
    variance_process: VarianceProcess = field(default_factory=VarianceProcess)
    alarm_latched: bool = False
    solver: Optional[MixtureRadiusSolver] = None


def new_urm_state(config: MonitorConfig) -> UrmState:
    return UrmState(solver=MixtureRadiusSolver(config.cs_spec))


def urm_step(
    state: UrmState,
    proxies_t: Sequence[float],
    calib: UrmCalibration,
    config: MonitorConfig,
) -> tuple[UrmState, BoundTrace]:
    """Advance the unsupervised monitor by one step of proxy values.

    The per-step exceedance fraction 1[proxy > beta0] feeds the same
    confidence-sequence machinery as the risk monitors (the fraction already
    lies in [0, 1], so normalization is the identity); the running-risk lower
    bound is tau * (exceedance lower bound - pfp0_ucb), clipped at 0 in the
    emitted row.
    """
    if len(proxies_t) == 0:
        raise ValueError("proxies_t must be nonempty")
    if state.solver is None:
        state.solver = MixtureRadiusSolver(config.cs_spec)
    frac = sum(1.0 for p in proxies_t if p > calib.beta0) / len(proxies_t)
    state.variance_process = variance_process_update(state.variance_process, frac)
    state.t += 1
    t = state.t
    state.exceed_sum += frac
    exceed_mean = state.exceed_sum / t
    radius = state.solver.radius(state.variance_process.v)
    lower = calib.tau * (exceed_mean - radius / t - calib.pfp0_ucb)
    if lower > calib.source_upper_bound + config.eps_tol:
        state.alarm_latched = True
    trace = BoundTrace(
        t=t,
        step_estimate=calib.tau * frac,
        running_estimate=calib.tau * exceed_mean,
        lower_bound=max(lower, 0.0),
        upper_bound_source=calib.source_upper_bound,
        eta_t=0.0,
        v_t=state.variance_process.v,
        alarm=state.alarm_latched,
    )
    return state, trace


class UrmMonitor:
    """Convenience wrapper for running URM over a stream of proxy lists."""

    def __init__(self, calib: UrmCalibration, config: MonitorConfig):
        self.calib = calib
        self.config = config
        self.state = new_urm_state(config)

    def step(self, proxies_t: Sequence[float]) -> BoundTrace:
        self.state, trace = urm_step(self.state, proxies_t, self.calib, self.config)
        return trace
