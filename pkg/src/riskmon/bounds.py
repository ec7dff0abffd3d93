"""
Concentration machinery: a conjugate-mixture empirical-Bernstein confidence
sequence for running means of [0, 1] values, a fixed-sample Hoeffding radius,
and a test-by-betting upper confidence bound for bounded values.

The confidence sequence radius ``u(V)`` is defined through the mixture
integral

    I(S, V) = integral over (0, lambda_max] of
              q(lambda) * exp(lambda * S - psi_E(lambda) * V) dlambda

with ``q`` uniform on the truncated support and
``psi_E(lambda) = -log(1 - lambda) - lambda``.  ``u(V)`` is the unique S at
which ``I(S, V)`` crosses ``1 / delta_t``; dividing by the step count gives an
anytime-valid one-sided radius around the running mean.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .estimators import LabeledLossPair, ppi_estimate

__all__ = [
    "ConfidenceSequenceSpec",
    "BettingSpec",
    "VarianceProcess",
    "psi_E",
    "mixture_integral",
    "cm_eb_radius",
    "MixtureRadiusSolver",
    "variance_process_update",
    "hoeffding_radius",
    "blockwise_ppi_values",
    "betting_upper_bound",
]


def psi_E(lam: float) -> float:
    """Exponential CGF-like function -log(1 - lambda) - lambda on [0, 1).

    Nonnegative, strictly increasing and convex; diverges as lambda -> 1.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    return -math.log1p(-lam) - lam


@dataclass(frozen=True)
class ConfidenceSequenceSpec:
    """Mixture density and numerical settings defining the radius u(V).

    Parameters
    ----------
    delta_t : float
        Miscoverage budget of the (one-sided) confidence sequence.
    lambda_max : float
        Upper end of the uniform mixture support; must stay below 1 where
        psi_E diverges.
    quadrature_nodes : int
        Gauss-Legendre node count for the mixture integral.
    root_tol : float
        Absolute tolerance on S in the root search for u(V).
    s_cap : float
        Hard ceiling for the bracket expansion; exceeding it raises, which
        signals a V far beyond any realistic monitoring horizon.
    """

    delta_t: float = 0.2
    lambda_max: float = 0.95
    quadrature_nodes: int = 200
    root_tol: float = 1e-6
    s_cap: float = 1e6

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_t < 1.0:
            raise ValueError("delta_t must lie in (0, 1)")
        if not 0.0 < self.lambda_max < 1.0:
            raise ValueError("lambda_max must lie in (0, 1)")
        if self.quadrature_nodes < 16:
            raise ValueError("quadrature_nodes must be >= 16")
        if self.root_tol <= 0:
            raise ValueError("root_tol must be > 0")
        if self.s_cap <= 1:
            raise ValueError("s_cap must be > 1")


@dataclass(frozen=True)
class BettingSpec:
    """Settings of the test-by-betting upper confidence bound."""

    delta_s: float = 0.05
    grid_size: int = 1000
    bet_cap: float = 0.75
    variance_floor: float = 1e-4

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_s < 1.0:
            raise ValueError("delta_s must lie in (0, 1)")
        if self.grid_size < 100:
            raise ValueError("grid_size must be >= 100")
        if not 0.0 < self.bet_cap < 1.0:
            raise ValueError("bet_cap must lie in (0, 1)")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be > 0")


@lru_cache(maxsize=32)
def _quadrature_nodes(spec: ConfidenceSequenceSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on (0, lambda_max), psi_E at the nodes, and log
    weights that already include the uniform mixture density."""
    x, w = np.polynomial.legendre.leggauss(spec.quadrature_nodes)
    half = spec.lambda_max / 2.0
    lam = half * (x + 1.0)
    psi = -np.log1p(-lam) - lam
    # density 1/lambda_max times the affine Jacobian lambda_max/2
    logw = np.log(w) + math.log(0.5)
    return lam, psi, logw


class MixtureRadiusSolver:
    """Evaluates the mixture integral and solves for the radius u(V).

    A solver instance caches the quadrature rule for one spec and keeps the
    previous root as a warm start, exploiting that u(V) is nondecreasing in V.
    Instances are cheap; the monitor keeps one per stream. All evaluation is
    done on the log scale so bracket probes far above the crossing cannot
    overflow.
    """

    def __init__(self, spec: ConfidenceSequenceSpec):
        self.spec = spec
        self._lam, self._psi, self._logw = _quadrature_nodes(spec)
        self._log_thresh = -math.log(spec.delta_t)
        self._last_v = 0.0
        self._last_root = 0.0
        # du/dV = E_tilted[psi_E] / E_tilted[lambda] <= psi_E(lambda_max)/lambda_max,
        # since psi_E(l)/l is increasing; used to seed a tight warm-start bracket.
        self._slope_cap = psi_E(spec.lambda_max) / spec.lambda_max

    def log_integral(self, s: float, v: float) -> float:
        """log of the mixture integral at (S, V)."""
        a = s * self._lam - v * self._psi + self._logw
        m = a.max()
        return float(m + math.log(np.exp(a - m).sum()))

    def _log_integral_and_slope(self, s: float, v: float) -> tuple[float, float]:
        a = s * self._lam - v * self._psi + self._logw
        m = a.max()
        e = np.exp(a - m)
        tot = e.sum()
        slope = float(np.dot(self._lam, e) / tot)
        return float(m + math.log(tot)), slope

    def radius(self, v: float) -> float:
        """The S where the mixture integral crosses 1/delta_t, to root_tol.

        Bracket: start from the warm-started lower end, double the upper end
        geometrically until the integral exceeds the threshold, then refine
        with safeguarded Newton steps (the log-integral is increasing and
        convex in S, so Newton from above converges monotonically; bisection
        is the fallback whenever a step leaves the bracket).
        """
        if v < 0:
            raise ValueError("V must be >= 0")
        spec = self.spec
        target = self._log_thresh

        if v < self._last_v:
            self._last_v = 0.0
            self._last_root = 0.0
        if self._last_root > 0.0:
            # u is nondecreasing in V and its growth is capped by _slope_cap,
            # so the previous root brackets the new one from below and a short
            # extrapolation brackets it from above.
            lo = self._last_root
            hi = lo + self._slope_cap * (v - self._last_v) + spec.root_tol
            if self.log_integral(lo, v) >= target:
                # previous root (returned to within tol) already at/above the
                # new crossing; it is correct to within the tolerance
                self._last_v = v
                return lo
        else:
            lo, hi = 0.0, max(1.0, v)
        hi = min(hi, spec.s_cap)
        while self.log_integral(hi, v) < target:
            lo = hi
            if hi >= spec.s_cap:
                raise ArithmeticError(
                    f"radius crossing exceeds s_cap={spec.s_cap} at V={v}"
                )
            hi = min(2.0 * hi + 1.0, spec.s_cap)

        s = hi
        for _ in range(200):
            g, slope = self._log_integral_and_slope(s, v)
            if g >= target:
                hi = min(hi, s)
            else:
                lo = max(lo, s)
            if hi - lo <= spec.root_tol:
                break
            step = s - (g - target) / slope
            s = step if lo < step < hi else 0.5 * (lo + hi)
        root = 0.5 * (lo + hi)
        self._last_v = v
        self._last_root = root
        return root


def mixture_integral(s: float, v: float, spec: ConfidenceSequenceSpec) -> float:
    """Mixture integral I(S, V); strictly increasing in S, decreasing in V.

    Raises ArithmeticError when the result is not finite, which can only
    happen for S far beyond any bracket the radius search would visit.
    """
    if v < 0:
        raise ValueError("V must be >= 0")
    out = math.exp(MixtureRadiusSolver(spec).log_integral(s, v))
    if not math.isfinite(out):
        raise ArithmeticError(f"mixture integral overflowed at S={s}, V={v}")
    return out


def cm_eb_radius(v: float, spec: ConfidenceSequenceSpec) -> float:
    """Confidence-sequence radius u(V) (before division by the step count).

    Nondecreasing in V and nonincreasing in delta_t. Stateless convenience
    wrapper around :class:`MixtureRadiusSolver`.
    """
    return MixtureRadiusSolver(spec).radius(v)


@dataclass(frozen=True)
class VarianceProcess:
    """Cumulative squared prediction error of [0, 1] values against the
    running mean, the quantity driving the confidence sequence radius.

    ``last_running_mean`` is the predictor for the *next* value: before any
    observation it defaults to 0.5 (configurable to a normalized source
    estimate), afterwards it is the running mean of all values seen.
    """

    v: float = 0.0
    last_running_mean: float = 0.5
    count: int = 0
    sum_z: float = 0.0


def variance_process_update(vp: VarianceProcess, z: float) -> VarianceProcess:
    """Fold one value into the variance process; returns a new process."""
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"z={z} outside [0, 1]")
    v = vp.v + (z - vp.last_running_mean) ** 2
    count = vp.count + 1
    sum_z = vp.sum_z + z
    mean = min(max(sum_z / count, 0.0), 1.0)
    return VarianceProcess(v=v, last_running_mean=mean, count=count, sum_z=sum_z)


def hoeffding_radius(n: int, delta: float) -> float:
    """Fixed-sample Hoeffding radius sqrt(ln(1/delta) / (2n)) for [0,1] data."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    return math.sqrt(math.log(1.0 / delta) / (2.0 * n))


def blockwise_ppi_values(
    labeled: Sequence[LabeledLossPair],
    unlabeled_synth: Sequence[float],
    eta0: float,
) -> list[float]:
    """Per-labeled-sample prediction-powered values for the source bound.

    The unlabeled synthetic losses are partitioned into ``len(labeled)``
    contiguous blocks whose sizes differ by at most one; sample i gets

        z_i = eta0 * mean(block_i) + true_loss_i - eta0 * synth_loss_i.

    Each z_i lies in [-eta0, 1 + eta0] and is unbiased for the source risk.
    When the block sizes are equal the mean of the returned list equals the
    pooled prediction-powered estimate exactly. An empty unlabeled list is a
    degenerate case (block means defined as 0) and emits a warning.
    """
    n = len(labeled)
    if n == 0:
        raise ValueError("labeled must be nonempty")
    N = len(unlabeled_synth)
    if N == 0 and eta0 != 0.0:
        warnings.warn(
            "blockwise_ppi_values: empty unlabeled batch, block means taken as 0",
            stacklevel=2,
        )
    base, extra = divmod(N, n)
    out = []
    start = 0
    for i, pair in enumerate(labeled):
        size = base + (1 if i < extra else 0)
        block = unlabeled_synth[start : start + size]
        start += size
        block_mean = (sum(block) / size) if size > 0 else 0.0
        out.append(eta0 * block_mean + pair.true_loss - eta0 * pair.synth_loss)
    return out


def betting_upper_bound(
    values: Sequence[float],
    value_range: tuple[float, float],
    spec: BettingSpec,
) -> float:
    """Upper confidence bound on the mean of bounded i.i.d. values by betting.

    Values are affinely rescaled to [0, 1]. For every candidate mean m on a
    uniform grid, a wealth process

        W_t(m) = prod_i (1 + lambda_i * (m - z_i))

    is grown with predictable, variance-adaptive bets

        lambda_i(m) = min( sqrt(2 ln(1/delta_s) / (var_{i-1} * i)),
                           bet_cap / max(1 - m, variance_floor) )

    where ``var_{i-1}`` is the running sample variance of the rescaled values
    (floored at ``variance_floor``, 1/4 before two observations). The second
    term caps the bet where a value of 1 would hurt most, so every wealth
    factor stays >= 1 - bet_cap > 0; for any m not exceeding the true mean
    the process is then a nonnegative supermartingale, and rejecting m once
    its wealth reaches 1/delta_s gives

        P(true mean <= returned bound) >= 1 - delta_s.

    The bound returned is the largest never-rejected grid mean, rounded up by
    one grid step (grid-conservative) and mapped back to the original range.

    Parameters
    ----------
    values : sequence of float
        Observations, all within ``value_range``.
    value_range : (float, float)
        Known support of the observations; upper end strictly above lower.
    spec : BettingSpec
        Risk level, grid resolution, and bet-size settings.
    """
    lo, hi = value_range
    if not hi > lo:
        raise ValueError("value_range upper end must exceed lower end")
    z = (np.asarray(values, dtype=float) - lo) / (hi - lo)
    if z.size == 0:
        return hi
    if z.min() < -1e-12 or z.max() > 1.0 + 1e-12:
        raise ValueError("values outside the declared range")
    z = np.clip(z, 0.0, 1.0)

    grid = np.linspace(0.0, 1.0, spec.grid_size)
    cap = spec.bet_cap / np.maximum(1.0 - grid, spec.variance_floor)
    log_thresh = math.log(1.0 / spec.delta_s)
    log_2 = 2.0 * math.log(1.0 / spec.delta_s)
    log_wealth = np.zeros(spec.grid_size)
    rejected = np.zeros(spec.grid_size, dtype=bool)

    count = 0
    mean = 0.0
    m2 = 0.0
    var_prev = 0.25
    for i, zi in enumerate(z, start=1):
        lam = np.minimum(cap, math.sqrt(log_2 / (var_prev * i)))
        log_wealth += np.log1p(lam * (grid - zi))
        rejected |= log_wealth >= log_thresh
        count += 1
        delta = zi - mean
        mean += delta / count
        m2 += delta * (zi - mean)
        if count >= 2:
            var_prev = max(spec.variance_floor, m2 / (count - 1))

    surviving = np.nonzero(~rejected)[0]
    if surviving.size == 0:
        return hi
    idx = min(int(surviving[-1]) + 1, spec.grid_size - 1)
    return lo + (hi - lo) * float(grid[idx])
