"""Scalar observables and quantitative checkers for particle trajectories.

The checkers mirror the quantitative statements about the dynamics: the
dissipation of kinetic energy, the exponential velocity-diameter decay with
rate given by the weight evaluated at the position-spread bound, the bonding
asymptotics (energy to zero, separations positive, diameter within the
target), and the chain-control pattern residual.  All functions are pure and
operate on :class:`~flocklab.particles.Trajectory` data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import CommKernel, psi, singular
from .particles import BondingParams, ControlParams, ParticleEnsemble, Trajectory

__all__ = [
    "ReportViolation",
    "HypothesisUnmetWarning",
    "AsymptoticCollisionSuspected",
    "NonPositiveValue",
    "FlockReport",
    "BondingReport",
    "ControlReport",
    "kinetic_energy",
    "kinetic_energy_pairwise",
    "diameters",
    "velocity_spread_series",
    "position_spread_series",
    "check_unconditional_flocking",
    "check_conditional_flocking",
    "check_bonding_asymptotics",
    "check_control_pattern",
    "fit_decay_rate",
]

LATE_WINDOW_FRACTION = 0.2
BOUND_SLACK = 1e-3


class ReportViolation(AssertionError):
    """The decay bound failed under both norm readings; carries the sample."""

    def __init__(self, message: str, t: float, index: int):
        super().__init__(message)
        self.t = t
        self.index = index


class HypothesisUnmetWarning(UserWarning):
    """Initial data misses the conditional-flocking hypothesis (informational)."""


class AsymptoticCollisionSuspected(RuntimeError):
    """Late-window pairwise distances reached zero; pattern limit unreliable."""


class NonPositiveValue(ValueError):
    """Decay-rate fitting needs strictly positive series values."""


def kinetic_energy(state: ParticleEnsemble) -> float:
    """Kinetic energy (N/2) sum_i m_i |v_i|^2, i.e. (1/2) sum |v_i|^2 for equal masses."""
    n = state.n
    return 0.5 * n * float(state.masses @ (state.velocities ** 2).sum(-1))


def kinetic_energy_pairwise(state: ParticleEnsemble) -> float:
    """(1/4N) sum_{ij} |v_i - v_j|^2; equals the kinetic energy for equal masses
    with zero mean velocity."""
    v = state.velocities
    dvel = v[None, :, :] - v[:, None, :]
    return float((dvel ** 2).sum()) / (4.0 * state.n)


def diameters(state: ParticleEnsemble) -> tuple[float, float]:
    """Maximum pairwise position and velocity distances."""
    x, v = state.positions, state.velocities
    dx = x[None, :, :] - x[:, None, :]
    dv = v[None, :, :] - v[:, None, :]
    pos = float(np.sqrt((dx ** 2).sum(-1)).max())
    vel = float(np.sqrt((dv ** 2).sum(-1)).max())
    return pos, vel


def _pairwise_sq_sum(arr: np.ndarray) -> float:
    diff = arr[None, :, :] - arr[:, None, :]
    return float((diff ** 2).sum())


def velocity_spread_series(traj: Trajectory) -> np.ndarray:
    """sum_{ij} |v_i - v_j|^2 at every sample."""
    return np.array([_pairwise_sq_sum(traj.velocities[k]) for k in range(traj.n_samples)])


def position_spread_series(traj: Trajectory) -> np.ndarray:
    """sum_{ij} |x_i - x_j|^2 at every sample."""
    return np.array([_pairwise_sq_sum(traj.positions[k]) for k in range(traj.n_samples)])


@dataclass
class FlockReport:
    """Outcome of a flocking-bound check.

    ``velocity_norm_series`` stores (t, sum_{ij}|v_i-v_j|^2); the decay bound
    is verified under both readings of the norm (the squared sum itself and
    its square root), and the flags record which held everywhere.
    """

    aligned: bool
    flocked: bool
    position_diameter_sup: float
    velocity_norm_series: np.ndarray  # (S, 2) columns t, spread
    fitted_decay_rate: float
    bound_rate: float
    x_m: float = 0.0
    x_M: float = 0.0
    bound_holds_sq: bool = True
    bound_holds_root: bool = True
    hypothesis_met: Optional[bool] = None

    def __post_init__(self) -> None:
        if self.flocked and not self.aligned:
            raise ValueError("flocked requires aligned")


def _late_slice(n: int) -> slice:
    start = int(np.floor(n * (1.0 - LATE_WINDOW_FRACTION)))
    return slice(min(start, n - 1), n)


def _flock_bound_check(traj: Trajectory, alpha: float) -> FlockReport:
    t = traj.times
    s = velocity_spread_series(traj)
    xs = position_spread_series(traj)
    x_m, x_M = float(xs.min()), float(xs.max())
    rate = psi(singular(alpha), x_M) if x_M > 0 else np.inf
    s0 = s[0]

    env_sq = (1.0 + BOUND_SLACK) * s0 * np.exp(-rate * t)
    env_root = (1.0 + BOUND_SLACK) * np.sqrt(s0) * np.exp(-rate * t)
    ok_sq = bool(np.all(s <= env_sq + 1e-14))
    ok_root = bool(np.all(np.sqrt(s) <= env_root + 1e-14))
    if not (ok_sq or ok_root):
        bad = int(np.argmax(~((s <= env_sq + 1e-14) | (np.sqrt(s) <= env_root + 1e-14))))
        raise ReportViolation(
            f"decay bound failed under both readings at t={t[bad]:.6g}",
            float(t[bad]), bad)

    if s0 > 0 and s[-1] > 0:
        pos = s > 0
        fitted = fit_decay_rate(t[pos], s[pos],
                                window=(t[pos][0], t[pos][-1]))
    else:
        fitted = 0.0

    aligned = s[-1] <= max(1e-10, 1e-6 * s0)
    diam = np.array([diameters(traj.ensemble_at(k))[0] for k in range(traj.n_samples)])
    sup = float(diam.max())
    late = diam[_late_slice(len(diam))]
    growing = late[-1] - late[0] > 0.05 * (sup + 1e-12)
    flocked = bool(aligned and not growing)

    return FlockReport(aligned=aligned, flocked=flocked, position_diameter_sup=sup,
                       velocity_norm_series=np.column_stack([t, s]),
                       fitted_decay_rate=fitted, bound_rate=float(rate),
                       x_m=x_m, x_M=x_M,
                       bound_holds_sq=ok_sq, bound_holds_root=ok_root)


def check_unconditional_flocking(traj: Trajectory, alpha: float) -> FlockReport:
    """Verify the unconditional decay bound, valid for alpha in (0, 1].

    The spread sum_{ij}|v_i-v_j|^2 must stay below its initial value times
    exp(-psi(x_M) t) (within a 1e-3 slack factor), where x_M is the
    empirical supremum of sum_{ij}|x_i-x_j|^2 over the run.  Raises
    ``ReportViolation`` when both norm readings fail.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("unconditional bound applies to alpha in (0, 1]")
    if _pairwise_sq_sum(traj.positions[0]) == 0.0:
        raise ValueError("initial positions must not all coincide")
    return _flock_bound_check(traj, alpha)


def check_conditional_flocking(traj: Trajectory, alpha: float) -> FlockReport:
    """Verify the decay bound for alpha > 1 under the smallness hypothesis.

    The hypothesis couples initial spreads:
    (sqrt(sum (x_i-x_j)^2))**(1-alpha) >= (alpha-1) sqrt(sum (v_i-v_j)^2).
    When unmet a ``HypothesisUnmetWarning`` is emitted and the bound is
    still evaluated and reported.
    """
    if not alpha > 1.0:
        raise ValueError("conditional bound applies to alpha > 1")
    x_sq = _pairwise_sq_sum(traj.positions[0])
    if x_sq == 0.0:
        raise ValueError("initial positions must not all coincide")
    v_sq = _pairwise_sq_sum(traj.velocities[0])
    met = np.sqrt(x_sq) ** (1.0 - alpha) >= (alpha - 1.0) * np.sqrt(v_sq)
    if not met:
        warnings.warn("initial data misses the conditional-flocking hypothesis",
                      HypothesisUnmetWarning)
    try:
        report = _flock_bound_check(traj, alpha)
    except ReportViolation:
        if met:
            raise
        # without the hypothesis the bound has no claim to hold; report it
        report = _flock_bound_check_no_raise(traj, alpha)
    report.hypothesis_met = bool(met)
    return report


def _flock_bound_check_no_raise(traj: Trajectory, alpha: float) -> FlockReport:
    try:
        return _flock_bound_check(traj, alpha)
    except ReportViolation:
        t = traj.times
        s = velocity_spread_series(traj)
        xs = position_spread_series(traj)
        x_M = float(xs.max())
        diam = np.array([diameters(traj.ensemble_at(k))[0] for k in range(traj.n_samples)])
        return FlockReport(aligned=bool(s[-1] <= max(1e-10, 1e-6 * s[0])), flocked=False,
                           position_diameter_sup=float(diam.max()),
                           velocity_norm_series=np.column_stack([t, s]),
                           fitted_decay_rate=0.0,
                           bound_rate=float(psi(singular(alpha), x_M)) if x_M > 0 else np.inf,
                           x_m=float(xs.min()), x_M=x_M,
                           bound_holds_sq=False, bound_holds_root=False)


@dataclass
class BondingReport:
    """Empirical bonding asymptotics: energy ratio, separations, diameter."""

    kinetic_ratio: float
    min_distance_late: float
    max_distance_end: float
    target_diameter: float


def check_bonding_asymptotics(traj: Trajectory, p: BondingParams) -> BondingReport:
    """Report the three asymptotic quantities of the bonding dynamics.

    (i) kinetic energy at the end relative to the start, (ii) the smallest
    pairwise distance over the late window (empirical positivity of the
    separation), (iii) the final diameter against the target 2R.
    """
    e0 = kinetic_energy(traj.ensemble_at(0))
    e1 = kinetic_energy(traj.ensemble_at(traj.n_samples - 1))
    ratio = e1 / e0 if e0 > 0 else 0.0

    late = range(*_late_slice(traj.n_samples).indices(traj.n_samples))
    min_d = np.inf
    for k in late:
        x = traj.positions[k]
        dx = x[None, :, :] - x[:, None, :]
        r = np.sqrt((dx ** 2).sum(-1))
        r = r + np.diag(np.full(len(x), np.inf))
        min_d = min(min_d, float(r.min()))

    diam_end, _ = diameters(traj.ensemble_at(traj.n_samples - 1))
    return BondingReport(kinetic_ratio=float(ratio), min_distance_late=float(min_d),
                         max_distance_end=diam_end, target_diameter=2.0 * p.R)


@dataclass
class ControlReport:
    """Pattern residual and velocity diameter at the end of a control run."""

    pattern_residual: float
    velocity_diameter_end: float
    min_distance_late: float


def check_control_pattern(traj: Trajectory, p: ControlParams,
                          guard_tol: float = 1e-8) -> ControlReport:
    """Measure the chain-pattern residual max_i |x_i - x_{i-1} + z_{i-1}| at
    the final sample.

    Raises ``AsymptoticCollisionSuspected`` when the late-window minimum
    pairwise distance falls to ``guard_tol``: the limit pattern requires
    asymptotically separated agents.
    """
    late = range(*_late_slice(traj.n_samples).indices(traj.n_samples))
    min_d = np.inf
    for k in late:
        x = traj.positions[k]
        dx = x[None, :, :] - x[:, None, :]
        r = np.sqrt((dx ** 2).sum(-1)) + np.diag(np.full(len(x), np.inf))
        min_d = min(min_d, float(r.min()))
    if min_d <= guard_tol:
        raise AsymptoticCollisionSuspected(
            f"late-window min pairwise distance {min_d:.3e} <= {guard_tol:.1e}")

    x_end = traj.positions[-1]
    res = x_end[1:] - x_end[:-1] + p.z
    residual = float(np.sqrt((res ** 2).sum(-1)).max())
    _, vd = diameters(traj.ensemble_at(traj.n_samples - 1))
    return ControlReport(pattern_residual=residual, velocity_diameter_end=vd,
                         min_distance_late=float(min_d))


def fit_decay_rate(times: np.ndarray, values: np.ndarray,
                   window: tuple[float, float]) -> float:
    """Least-squares exponential decay rate of a positive series.

    Fits log(value) against t over ``window`` and returns the negated slope;
    an exact series c*exp(-r t) yields r.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise NonPositiveValue("series values must be strictly positive")
    lo, hi = window
    if lo < times[0] - 1e-12 or hi > times[-1] + 1e-12 or not lo < hi:
        raise ValueError("window must lie within the series span")
    sel = (times >= lo) & (times <= hi)
    if sel.sum() < 2:
        raise ValueError("window must contain at least two samples")
    t, y = times[sel], np.log(values[sel])
    slope = np.polyfit(t, y, 1)[0]
    return float(-slope)
