"""Alignment particle systems: right-hand sides and event-aware integration.

The core model is the velocity-alignment ODE system

    dx_i/dt = v_i,
    dv_i/dt = sum_j m_j (v_j - v_i) psi(|x_i - x_j|),

with total mass 1 (the equal-mass case m_i = 1/N recovers the familiar
1/N-weighted sum).  Two variants add forces on top of the alignment term: a
bonding force that drives neighbours toward a target separation 2R, and a
decentralized chain controller that steers each agent to a prescribed offset
from its predecessor.

For the singular weight s**(-alpha) the dynamics is smooth away from
contacts.  With alpha >= 1 contacts never happen (collision avoidance) and
the integrator enforces a hard distance floor as a failure detector.  With
alpha < 1 particles may collide and may stick; sticking is resolved by
merging the particles into a class that subsequently moves as one body with
the combined mass, excluding intra-class interactions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import CommKernel, KernelKind, psi_on_matrix, psi_primitive

__all__ = [
    "HARD_DISTANCE_FLOOR",
    "SingularOverlap",
    "StepUnderflow",
    "PairNotStuck",
    "ParticleEnsemble",
    "BondingParams",
    "ControlParams",
    "Event",
    "EventLog",
    "CSSystem",
    "BondingSystem",
    "ControlSystem",
    "IntegrationOptions",
    "Trajectory",
    "cs_rhs",
    "bonding_rhs",
    "control_rhs",
    "integrate",
    "two_particle_sticking",
    "TwoBodyClassification",
    "merge_stuck",
    "random_ensemble",
    "write_trajectory_csv",
    "write_events_csv",
]

# Below this inter-class distance a strongly singular run is considered
# failed: exact dynamics with alpha >= 1 can never get here.
HARD_DISTANCE_FLOOR = 1e-13


class SingularOverlap(RuntimeError):
    """Inter-class distance underflowed the hard floor of a singular kernel."""


class StepUnderflow(RuntimeError):
    """Required step fell below the floor with no resolvable sticking event."""

    def __init__(self, message: str, t: float, state: "ParticleEnsemble"):
        super().__init__(message)
        self.t = t
        self.state = state


class PairNotStuck(ValueError):
    """merge_stuck was asked to merge a pair outside the sticking tolerances."""


# ---------------------------------------------------------------------------
# state


@dataclass
class ParticleEnsemble:
    """Positions, velocities and masses of N agents plus the merged partition.

    ``class_id[i]`` labels the merged class of particle i; members of one
    class share bitwise-identical position and velocity.  Masses are strictly
    positive and sum to 1.
    """

    positions: np.ndarray  # (N, d)
    velocities: np.ndarray  # (N, d)
    masses: np.ndarray  # (N,)
    class_id: np.ndarray  # (N,) int

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        self.class_id = np.asarray(self.class_id, dtype=np.int64)
        if self.positions.ndim != 2:
            raise ValueError("positions must be an (N, d) array")
        n, d = self.positions.shape
        if self.velocities.shape != (n, d):
            raise ValueError("positions and velocities must have matching shapes")
        if self.masses.shape != (n,) or self.class_id.shape != (n,):
            raise ValueError("masses/class_id must have one entry per particle")
        if np.any(self.masses <= 0.0):
            raise ValueError("masses must be strictly positive")
        if abs(float(self.masses.sum()) - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1 within 1e-12")
        for cid in np.unique(self.class_id):
            members = np.flatnonzero(self.class_id == cid)
            if len(members) > 1:
                ref = members[0]
                if not (np.all(self.positions[members] == self.positions[ref])
                        and np.all(self.velocities[members] == self.velocities[ref])):
                    raise ValueError("members of a merged class must share state exactly")

    @classmethod
    def create(cls, positions, velocities, masses=None, class_id=None) -> "ParticleEnsemble":
        """Build an ensemble; 1-D inputs are read as N particles on the line."""
        x = np.asarray(positions, dtype=float)
        v = np.asarray(velocities, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        n = x.shape[0]
        if masses is None:
            masses = np.full(n, 1.0 / n)
        if class_id is None:
            class_id = np.arange(n)
        return cls(x, v, np.asarray(masses, float), np.asarray(class_id))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i, cid in enumerate(self.class_id):
            out.setdefault(int(cid), []).append(i)
        return [sorted(v) for _, v in sorted(out.items())]

    def class_masses(self) -> np.ndarray:
        """Total mass of the class each particle belongs to, per particle."""
        sums: dict[int, float] = {}
        for cid, m in zip(self.class_id, self.masses):
            sums[int(cid)] = sums.get(int(cid), 0.0) + float(m)
        return np.array([sums[int(c)] for c in self.class_id])

    def momentum(self) -> np.ndarray:
        return self.masses @ self.velocities

    def min_interclass_distance(self) -> float:
        mask = self.class_id[:, None] != self.class_id[None, :]
        if not mask.any():
            return np.inf
        diff = self.positions[None, :, :] - self.positions[:, None, :]
        r = np.sqrt((diff ** 2).sum(-1))
        return float(r[mask].min())

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.velocities.copy(),
                                self.masses.copy(), self.class_id.copy())


def random_ensemble(seed: int, n: int, dim: int, x_scale: float = 1.0,
                    v_scale: float = 0.5, min_separation: float = 0.05,
                    mean_zero: bool = True) -> ParticleEnsemble:
    """Seeded uniform-box initial data, non-collisional by rejection.

    Positions are drawn uniformly from [0, x_scale]^d until all pairwise
    distances exceed ``min_separation``; velocities uniformly from
    [-v_scale, v_scale]^d.  With ``mean_zero`` both averages are removed,
    matching the usual centre-of-mass normalization.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        x = rng.uniform(0.0, x_scale, size=(n, dim))
        diff = x[None, :, :] - x[:, None, :]
        r = np.sqrt((diff ** 2).sum(-1)) + np.eye(n)
        if r.min() > min_separation:
            break
    else:
        raise RuntimeError("could not draw a separated configuration")
    v = rng.uniform(-v_scale, v_scale, size=(n, dim))
    if mean_zero:
        x = x - x.mean(axis=0)
        v = v - v.mean(axis=0)
    return ParticleEnsemble.create(x, v)


# ---------------------------------------------------------------------------
# parameters and events


@dataclass(frozen=True)
class BondingParams:
    """Couplings of the bonding force; R is the target half-distance."""

    K1: float = 1.0
    K2: float = 1.0
    Ktilde: float = 1.0
    R: float = 1.0

    def __post_init__(self) -> None:
        if not self.R > 0:
            raise ValueError("R must be positive")
        if min(self.K1, self.K2, self.Ktilde) < 0:
            raise ValueError("couplings must be nonnegative")


@dataclass(frozen=True)
class ControlParams:
    """Chain-controller gain K, weight exponent beta and offsets z (N-1, d)."""

    K: float
    beta: float
    z: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", np.atleast_2d(np.asarray(self.z, dtype=float)))
        if self.K < 0 or not self.beta > 0:
            raise ValueError("need K >= 0 and beta > 0")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # "collision" | "sticking" | "merge"
    members: tuple[int, ...]


class EventLog:
    """Append-only event record with non-decreasing times."""

    def __init__(self) -> None:
        self.records: list[Event] = []

    def add(self, time: float, kind: str, members: Sequence[int]) -> None:
        if self.records and time < self.records[-1].time:
            raise ValueError("event times must be non-decreasing")
        self.records.append(Event(float(time), kind, tuple(int(m) for m in members)))

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.records if e.kind == kind]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


# ---------------------------------------------------------------------------
# right-hand sides


def _pairwise(state: ParticleEnsemble):
    """Difference tensor D[i, j] = x_j - x_i, distances and inter-class mask."""
    x = state.positions
    diff = x[None, :, :] - x[:, None, :]
    r = np.sqrt((diff ** 2).sum(-1))
    active = state.class_id[:, None] != state.class_id[None, :]
    return diff, r, active


def _check_overlap(kernel: CommKernel, r: np.ndarray, active: np.ndarray) -> None:
    if kernel.kind is not KernelKind.SINGULAR or not active.any():
        return
    floor = HARD_DISTANCE_FLOOR if kernel.exponent >= 1.0 else 0.0
    if float(r[active].min()) <= floor:
        raise SingularOverlap(
            f"inter-class distance {r[active].min():.3e} at or below floor {floor:.1e}")


def cs_rhs(state: ParticleEnsemble, kernel: CommKernel):
    """Alignment right-hand side with mass weights, skipping intra-class pairs.

    Returns (dx, dv) with dx = v and
    dv_i = sum over j outside class(i) of m_j (v_j - v_i) psi(|x_i - x_j|).
    Pairwise antisymmetry makes the total momentum derivative vanish.
    """
    diff, r, active = _pairwise(state)
    _check_overlap(kernel, r, active)
    w = psi_on_matrix(kernel, r, active) * state.masses[None, :]
    v = state.velocities
    dv = w @ v - w.sum(axis=1)[:, None] * v
    return v.copy(), dv


def bonding_rhs(state: ParticleEnsemble, kernel: CommKernel, p: BondingParams,
                include_radial_term: bool = True):
    """Alignment plus bonding force, 1/N weights.

    The bonding force combines a radial velocity-damping term (coupling
    Ktilde, projected along x_i - x_j) and a spring toward separation 2R
    (coupling K2).  ``include_radial_term=False`` drops the middle term,
    the simplified variant with identical asymptotics.
    """
    n = state.n
    diff, r, active = _pairwise(state)
    np.fill_diagonal(active, False)
    _check_overlap(kernel, r, active)
    safe_r = np.where(active, r, 1.0)

    v = state.velocities
    w_align = psi_on_matrix(kernel, r, active) * (p.K1 / n)
    dv = w_align @ v - w_align.sum(axis=1)[:, None] * v

    if include_radial_term and p.Ktilde != 0.0:
        # (v_i - v_j) . (x_i - x_j) == (v_j - v_i) . (x_j - x_i)
        dvel = v[None, :, :] - v[:, None, :]
        radial = (dvel * diff).sum(-1)
        coef = np.where(active, radial / (2.0 * safe_r ** 2), 0.0) * (p.Ktilde / n)
        dv = dv + (coef[:, :, None] * diff).sum(axis=1)

    if p.K2 != 0.0:
        coef = np.where(active, (r - 2.0 * p.R) / (2.0 * safe_r), 0.0) * (p.K2 / n)
        dv = dv + (coef[:, :, None] * diff).sum(axis=1)

    return v.copy(), dv


def control_rhs(state: ParticleEnsemble, kernel: CommKernel, p: ControlParams):
    """Alignment (gain K/N) plus the decentralized chain control.

    Agent i is steered toward offset z_{i-1} from agent i-1 through the
    smooth weight phi(s) = (1+s)**(-beta) evaluated at the squared pattern
    error; the first and last agents carry the one-sided boundary forms.
    """
    n = state.n
    diff, r, active = _pairwise(state)
    np.fill_diagonal(active, False)
    _check_overlap(kernel, r, active)

    v = state.velocities
    w = psi_on_matrix(kernel, r, active) * (p.K / n)
    dv = w @ v - w.sum(axis=1)[:, None] * v

    if n >= 2:
        if p.z.shape != (n - 1, state.dim):
            raise ValueError(f"z must have shape {(n - 1, state.dim)}, got {p.z.shape}")
        x = state.positions
        # pull[k] acts on the link between agents k and k+1:
        # pull[k] = phi(|x_k - x_{k+1} - z_k|^2) (x_k - x_{k+1} - z_k)
        w_err = x[:-1] - x[1:] - p.z
        phi = (1.0 + (w_err ** 2).sum(-1)) ** (-p.beta)
        pull = phi[:, None] * w_err
        u = np.zeros_like(v)
        u[0] = -pull[0]
        for i in range(1, n - 1):
            u[i] = pull[i - 1] - pull[i]
        u[n - 1] = pull[n - 2]
        dv = dv + u

    return v.copy(), dv


# ---------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class CSSystem:
    kernel: CommKernel

    name = "cs"

    @property
    def allows_merging(self) -> bool:
        return self.kernel.kind is KernelKind.SINGULAR and self.kernel.exponent < 1.0

    def rhs(self, state: ParticleEnsemble):
        return cs_rhs(state, self.kernel)


@dataclass(frozen=True)
class BondingSystem:
    kernel: CommKernel
    params: BondingParams
    include_radial_term: bool = True

    name = "bonding"
    allows_merging = False

    def rhs(self, state: ParticleEnsemble):
        return bonding_rhs(state, self.kernel, self.params, self.include_radial_term)


@dataclass(frozen=True)
class ControlSystem:
    kernel: CommKernel
    params: ControlParams

    name = "control"
    allows_merging = False

    def rhs(self, state: ParticleEnsemble):
        return control_rhs(state, self.kernel, self.params)


# ---------------------------------------------------------------------------
# merging


def merge_stuck(state: ParticleEnsemble, pairs: Sequence[tuple[int, int]],
                tol_x: float = 1e-8, tol_v: float = 1e-6) -> ParticleEnsemble:
    """Merge stuck pairs into classes by union-find closure.

    Every listed pair must be within ``tol_x`` in position and ``tol_v`` in
    velocity, else ``PairNotStuck``.  Members of each resulting class are
    assigned the mass-weighted mean state, so class momentum and total mass
    are preserved (to round-off); subsequent right-hand sides exclude
    intra-class interactions.
    """
    x, v = state.positions, state.velocities
    for i, j in pairs:
        if np.linalg.norm(x[i] - x[j]) > tol_x:
            raise PairNotStuck(f"pair ({i},{j}) exceeds position tolerance")
        if np.linalg.norm(v[i] - v[j]) > tol_v:
            raise PairNotStuck(f"pair ({i},{j}) exceeds velocity tolerance")

    parent = {int(c): int(c) for c in np.unique(state.class_id)}

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in pairs:
        ra, rb = find(int(state.class_id[i])), find(int(state.class_id[j]))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    new_id = np.array([find(int(c)) for c in state.class_id])
    new_x, new_v = x.copy(), v.copy()
    for cid in np.unique(new_id):
        members = np.flatnonzero(new_id == cid)
        if len(members) > 1:
            m = state.masses[members]
            total = m.sum()
            new_x[members] = (m[:, None] * x[members]).sum(0) / total
            new_v[members] = (m[:, None] * v[members]).sum(0) / total
    return ParticleEnsemble(new_x, new_v, state.masses.copy(), new_id)


# ---------------------------------------------------------------------------
# integration


@dataclass
class IntegrationOptions:
    """Tolerances and event thresholds of the adaptive integrator.

    The embedded 5(4) pair controls local error through rtol/atol; on top of
    that the step obeys the ceiling  h <= c_safe * d_min / (v_scale + eps_v)
    for singular kernels, shrinking steps near close approaches.  Sticking
    is declared when an inter-class pair is within tol_x and tol_v and, for
    alpha < 1, the local pair first integral does not predict escape beyond
    tol_x.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = np.inf
    c_safe: float = 0.2
    eps_v: float = 1e-12
    tol_x: float = 1e-8
    tol_v: float = 1e-6
    h_floor: float = 1e-12
    record_every_step: bool = False


@dataclass
class Trajectory:
    """Sampled states of one run plus its event log and run metadata."""

    times: np.ndarray  # (S,)
    positions: np.ndarray  # (S, N, d)
    velocities: np.ndarray  # (S, N, d)
    masses: np.ndarray  # (N,)
    class_ids: np.ndarray  # (S, N)
    events: EventLog
    meta: dict

    @property
    def n_samples(self) -> int:
        return len(self.times)

    def ensemble_at(self, k: int) -> ParticleEnsemble:
        return ParticleEnsemble(self.positions[k].copy(), self.velocities[k].copy(),
                                self.masses.copy(), self.class_ids[k].copy())

    def pairwise_distance_min(self) -> np.ndarray:
        """Minimum inter-class distance at each sample."""
        out = np.empty(self.n_samples)
        for k in range(self.n_samples):
            out[k] = self.ensemble_at(k).min_interclass_distance()
        return out


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_DP_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


class _StageOverlap(Exception):
    """Internal: a trial stage hit the singular floor; reject and shrink."""


def _pair_scales(x: np.ndarray, v: np.ndarray, class_id: np.ndarray):
    """Min inter-class distance and max inter-class relative speed."""
    mask = class_id[:, None] != class_id[None, :]
    if not mask.any():
        return np.inf, 0.0
    dx = x[None, :, :] - x[:, None, :]
    r = np.sqrt((dx ** 2).sum(-1))
    dvel = v[None, :, :] - v[:, None, :]
    s = np.sqrt((dvel ** 2).sum(-1))
    return float(r[mask].min()), float(s[mask].max())


def _predicts_sticking(alpha: float, kappa: float, xi, xj, vi, vj,
                       tol_x: float, tol_v: float) -> bool:
    """Local two-body first-integral gate: does the pair fail to escape tol_x?

    Along the reduced radial dynamics the quantity rdot + kappa*Psi(r) is
    conserved; a pair whose value exceeds kappa*Psi(tol_x) + tol_v would
    separate beyond tol_x again, so it is not merged.
    """
    d = xi - xj
    r = float(np.linalg.norm(d))
    if r == 0.0:
        return True
    rdot = float((vi - vj) @ d) / r
    c = rdot + kappa * psi_primitive(alpha, r)
    return c <= kappa * psi_primitive(alpha, tol_x) + tol_v


def integrate(system, state0: ParticleEnsemble, t_end: float,
              opts: Optional[IntegrationOptions] = None,
              t_eval: Optional[np.ndarray] = None,
              n_samples: int = 201) -> tuple[Trajectory, EventLog]:
    """Advance an ensemble to ``t_end`` with event-aware adaptive stepping.

    Returns the trajectory sampled at ``t_eval`` (defaults to ``n_samples``
    uniform times including both endpoints) and the event log.  Sticking
    events merge classes in place for weakly singular alignment runs; the
    strongly singular regime admits no merges and raises ``SingularOverlap``
    if the hard floor is ever crossed.  ``StepUnderflow`` reports the state
    when no admissible step remains.
    """
    opts = opts or IntegrationOptions()
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, n_samples)
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval[0] != 0.0 or t_eval[-1] != t_end or np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must increase from 0 to t_end")

    kernel: CommKernel = system.kernel
    is_sing = kernel.kind is KernelKind.SINGULAR
    alpha = kernel.exponent
    weakly_singular = is_sing and alpha < 1.0

    state = state0.copy()
    n, d = state.n, state.dim
    events = EventLog()
    p0 = state.momentum().copy()

    def rhs_arrays(x, v, cid):
        st = ParticleEnsemble.__new__(ParticleEnsemble)
        st.positions, st.velocities = x, v
        st.masses, st.class_id = state.masses, cid
        try:
            return system.rhs(st)
        except SingularOverlap:
            raise _StageOverlap from None

    times_out = [0.0]
    xs_out = [state.positions.copy()]
    vs_out = [state.velocities.copy()]
    cids_out = [state.class_id.copy()]
    next_sample = 1

    t = 0.0
    x = state.positions.copy()
    v = state.velocities.copy()
    cid = state.class_id.copy()
    min_dist_seen = state.min_interclass_distance()
    contact_pairs: set[tuple[int, int]] = set()

    dx0, dv0 = rhs_arrays(x, v, cid)
    k1 = (dx0, dv0)
    scale0 = max(np.abs(v).max(), np.abs(dv0).max(), 1e-3)
    h = min(opts.max_step, t_end, 1e-2 / scale0)

    def error_norm(ex, ev, x_new, v_new):
        sx = opts.atol + opts.rtol * np.maximum(np.abs(x), np.abs(x_new))
        sv = opts.atol + opts.rtol * np.maximum(np.abs(v), np.abs(v_new))
        q = np.concatenate([(ex / sx).ravel(), (ev / sv).ravel()])
        return float(np.sqrt(np.mean(q ** 2)))

    n_steps = 0
    while t < t_end - 1e-14:
        t_target = t_eval[next_sample] if next_sample < len(t_eval) else t_end
        d_min, v_rel = _pair_scales(x, v, cid)
        ceiling = np.inf
        if is_sing and np.isfinite(d_min):
            ceiling = opts.c_safe * d_min / (v_rel + opts.eps_v)
        h_try = min(h, ceiling, opts.max_step, t_target - t)

        if h_try < opts.h_floor:
            # the ceiling has collapsed: resolve an event or give up
            merged = False
            if weakly_singular:
                merged = _attempt_merge(state, x, v, cid, events, t, opts, alpha)
            if merged:
                x, v, cid = state.positions.copy(), state.velocities.copy(), state.class_id.copy()
                k1 = rhs_arrays(x, v, cid)
                h = min(opts.max_step, t_target - t)
                continue
            if weakly_singular and ceiling < h:
                # pass through a grazing contact: error control only
                h_try = min(h, opts.max_step, t_target - t)
            else:
                snap = ParticleEnsemble(x.copy(), v.copy(), state.masses.copy(), cid.copy())
                raise StepUnderflow(
                    f"step {h_try:.3e} below floor at t={t:.6g}, d_min={d_min:.3e}",
                    t, snap)

        # one embedded 5(4) attempt
        try:
            kx = [k1[0]]
            kv = [k1[1]]
            for s_i in range(5):
                ax = x.copy()
                av = v.copy()
                for j, a in enumerate(_DP_A[s_i]):
                    ax += h_try * a * kx[j]
                    av += h_try * a * kv[j]
                fx, fv = rhs_arrays(ax, av, cid)
                kx.append(fx)
                kv.append(fv)
            x5 = x.copy()
            v5 = v.copy()
            for j in range(6):
                x5 += h_try * _DP_B5[j] * kx[j]
                v5 += h_try * _DP_B5[j] * kv[j]
            fx7, fv7 = rhs_arrays(x5, v5, cid)
            ex = np.zeros_like(x)
            ev = np.zeros_like(v)
            for j in range(6):
                db = _DP_B5[j] - _DP_B4[j]
                ex += h_try * db * kx[j]
                ev += h_try * db * kv[j]
            ex -= h_try * _DP_B4[6] * fx7
            ev -= h_try * _DP_B4[6] * fv7
            err = error_norm(ex, ev, x5, v5)
        except _StageOverlap:
            if h_try < opts.h_floor:
                if is_sing and alpha >= 1.0:
                    raise SingularOverlap(
                        f"singular floor crossed at t={t:.6g} with h={h_try:.3e}")
                snap = ParticleEnsemble(x.copy(), v.copy(), state.masses.copy(), cid.copy())
                raise StepUnderflow("stage overlap at floor step", t, snap)
            h = h_try * 0.25
            continue

        if err > 1.0:
            if h_try <= opts.h_floor:
                snap = ParticleEnsemble(x.copy(), v.copy(), state.masses.copy(), cid.copy())
                raise StepUnderflow(
                    f"error control rejected the floor step at t={t:.6g}", t, snap)
            h = max(h_try * max(0.2, 0.9 * err ** -0.2), opts.h_floor)
            continue

        # accepted
        t = t + h_try
        x, v = x5, v5
        k1 = (fx7, fv7)
        n_steps += 1
        h = h_try * min(5.0, max(0.2, 0.9 * err ** -0.2 if err > 0 else 5.0))

        d_after, _ = _pair_scales(x, v, cid)
        min_dist_seen = min(min_dist_seen, d_after)
        if is_sing and alpha >= 1.0 and d_after <= HARD_DISTANCE_FLOOR:
            raise SingularOverlap(f"hard floor crossed at t={t:.6g}")

        if weakly_singular and d_after < opts.tol_x:
            state.positions, state.velocities, state.class_id = x, v, cid
            if _attempt_merge(state, x, v, cid, events, t, opts, alpha,
                              contact_pairs=contact_pairs):
                x = state.positions.copy()
                v = state.velocities.copy()
                cid = state.class_id.copy()
                k1 = rhs_arrays(x, v, cid)
        elif contact_pairs:
            contact_pairs.clear()

        while next_sample < len(t_eval) and t >= t_eval[next_sample] - 1e-14:
            times_out.append(t_eval[next_sample])
            xs_out.append(x.copy())
            vs_out.append(v.copy())
            cids_out.append(cid.copy())
            next_sample += 1

    while next_sample < len(t_eval):
        times_out.append(t_eval[next_sample])
        xs_out.append(x.copy())
        vs_out.append(v.copy())
        cids_out.append(cid.copy())
        next_sample += 1

    state.positions, state.velocities, state.class_id = x, v, cid
    momentum_drift = float(np.linalg.norm(state.momentum() - p0))
    meta = {
        "system": system.name,
        "kernel_kind": kernel.kind.value,
        "alpha": alpha,
        "n_steps": n_steps,
        "min_interclass_distance": min_dist_seen,
        "momentum_drift": momentum_drift,
        "beyond_classical_regime": bool(weakly_singular and alpha >= 0.5),
    }
    traj = Trajectory(np.array(times_out), np.array(xs_out), np.array(vs_out),
                      state.masses.copy(), np.array(cids_out), events, meta)
    return traj, events


def _attempt_merge(state: ParticleEnsemble, x, v, cid, events: EventLog, t: float,
                   opts: IntegrationOptions, alpha: float,
                   contact_pairs: Optional[set] = None) -> bool:
    """Scan inter-class pairs for sticking; merge with union-find closure.

    Returns True if any merge happened.  Pairs inside tol_x whose velocities
    are not small are logged as collisions (once per contact episode) when a
    contact set is supplied.
    """
    state.positions, state.velocities, state.class_id = x, v, cid
    mask = cid[:, None] != cid[None, :]
    if not mask.any():
        return False
    dx = x[None, :, :] - x[:, None, :]
    r = np.sqrt((dx ** 2).sum(-1))
    cand = np.argwhere(mask & (r < opts.tol_x))
    if len(cand) == 0:
        return False
    cmass = state.class_masses()
    stick_pairs = []
    collide_pairs = []
    for i, j in cand:
        if i >= j:
            continue
        dv = float(np.linalg.norm(v[i] - v[j]))
        kappa = float(cmass[i] + cmass[j])
        if dv < opts.tol_v and _predicts_sticking(alpha, kappa, x[i], x[j], v[i], v[j],
                                                  opts.tol_x, opts.tol_v):
            stick_pairs.append((int(i), int(j)))
        else:
            collide_pairs.append((int(i), int(j)))
    if contact_pairs is not None:
        for pair in collide_pairs:
            if pair not in contact_pairs:
                events.add(t, "collision", pair)
                contact_pairs.add(pair)
    if not stick_pairs:
        return False
    for pair in stick_pairs:
        events.add(t, "sticking", pair)
    merged = merge_stuck(state, stick_pairs, tol_x=opts.tol_x, tol_v=opts.tol_v)
    state.positions = merged.positions
    state.velocities = merged.velocities
    state.class_id = merged.class_id
    for cid_new in np.unique(merged.class_id):
        members = np.flatnonzero(merged.class_id == cid_new)
        if len(members) > 1 and any(i in members and j in members for i, j in stick_pairs):
            events.add(t, "merge", tuple(int(m) for m in members))
    return True


# ---------------------------------------------------------------------------
# two-body reduction


@dataclass(frozen=True)
class TwoBodyClassification:
    """Outcome of the reduced two-body gap dynamics x'' = -x' psi(x)."""

    sticks: bool
    collides: bool
    t_event: Optional[float]
    first_integral: float
    min_gap: Optional[float]
    contact_speed: Optional[float]


def two_particle_sticking(x0: float, v0: float, alpha: float,
                          class_tol: float = 1e-12) -> TwoBodyClassification:
    """Classify the two-body gap trajectory via its exact first integral.

    The reduced dynamics conserves  C = dx/dt + Psi(x).  The gap reaches 0
    exactly when C <= 0: with C = 0 the bodies stick (arrive with zero
    speed); with C < 0 they collide at speed |C| without sticking; with
    C > 0 the gap stalls at the positive root of Psi(x) = C.  Event times
    come from quadrature of dt = dx / (Psi(x) - C).
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("classification applies to alpha in (0, 1)")
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    from .kernels import sticking_time_quadrature

    c = v0 + psi_primitive(alpha, x0)
    if abs(c) <= class_tol:
        t_ev = sticking_time_quadrature(alpha, x0, 0.0)
        return TwoBodyClassification(True, True, t_ev, c, 0.0, 0.0)
    if c < 0.0:
        t_ev = sticking_time_quadrature(alpha, x0, c)
        return TwoBodyClassification(False, True, t_ev, c, 0.0, c)
    if v0 >= 0.0:
        return TwoBodyClassification(False, False, None, c, x0, None)
    min_gap = ((1.0 - alpha) * c) ** (1.0 / (1.0 - alpha))
    return TwoBodyClassification(False, False, None, c, float(min_gap), None)


# ---------------------------------------------------------------------------
# output


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Long-format CSV: t, particle, class, x_1..x_d, v_1..v_d, mass."""
    d = traj.positions.shape[2]
    header = (["t", "particle", "class"]
              + [f"x_{k + 1}" for k in range(d)]
              + [f"v_{k + 1}" for k in range(d)] + ["mass"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s, t in enumerate(traj.times):
            for i in range(traj.positions.shape[1]):
                row = [f"{t:.17g}", i, int(traj.class_ids[s, i])]
                row += [f"{val:.17g}" for val in traj.positions[s, i]]
                row += [f"{val:.17g}" for val in traj.velocities[s, i]]
                row.append(f"{traj.masses[i]:.17g}")
                w.writerow(row)


def write_events_csv(events: EventLog, path) -> None:
    """Event CSV: t, kind, members (members joined by '|')."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "members"])
        for e in events:
            w.writerow([f"{e.time:.17g}", e.kind, "|".join(str(m) for m in e.members)])
