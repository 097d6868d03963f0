"""Implicit solvers for the pressureless viscous system and its diffusion limit.

On a truncated line [-M, M] two problems are advanced side by side:

* the pressureless viscous system
      rho_t + (rho u)_x = 0,
      (rho u)_t + (rho u^2)_x - (rho^2 u_x)_x = 0,
  with zero-gradient velocity walls and zero-flux mass walls;
* the degenerate diffusion equation  rho_t = (rho^2 / 2)_xx  emanating from
  the same initial density.

Both use cell-centered second-order finite volumes and fully implicit Euler
steps solved by Newton iteration with analytic Jacobians (block-tridiagonal
for the coupled system, tridiagonal for the diffusion).  The inner Newton
loops are numba-compiled; a full production run (dx = dt = 0.01, t = 400)
takes tens of seconds per parameter value.

The initial data families are two bump profiles with velocity prescribed
through the ratio m0 / rho0 = c * rho0_x, so that v0 = u0 + rho0_x scales
like (c + 1); at c = -1 the viscous density coincides with the diffusion
solution, and the distance between the two is measured in a discrete
H^-1 surrogate (the L^2 norm of the primitive of the difference).
"""

from __future__ import annotations

import csv
import math
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

__all__ = [
    "NewtonDivergence",
    "NegativeDensity",
    "MassMismatch",
    "LineGrid",
    "LineField1D",
    "LineState",
    "PMState",
    "initial_case",
    "ns_step",
    "ns_advance",
    "pm_step",
    "pm_advance",
    "barenblatt",
    "hminus1_distance",
    "CSweepResult",
    "c_sweep",
    "run_ns_case",
    "run_pm_case",
    "eta_rate_study",
    "write_sweep_csvs",
]

MU_FLOOR = 1e-14  # viscosity-coefficient floor inside the Newton residual
PAPER_C_VALUES = (-0.1, -0.5, -0.9, -1.0, -1.1, -1.5, -1.9)


class NewtonDivergence(RuntimeError):
    """The implicit step's Newton iteration failed to reach tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NegativeDensity(RuntimeError):
    """A density cell fell below the admissible round-off band."""


class MassMismatch(ValueError):
    """H^-1 surrogate requires equal masses (mean-zero difference)."""


@dataclass(frozen=True)
class LineGrid:
    """Uniform cell-centered grid on [-half_width, half_width]."""

    half_width: float = 20.0
    n_cells: int = 4000
    bc: str = "neumann_zero_velocity_gradient"

    def __post_init__(self) -> None:
        if self.n_cells < 4 or self.half_width <= 0:
            raise ValueError("need at least 4 cells on a positive interval")
        if self.bc != "neumann_zero_velocity_gradient":
            raise ValueError(f"unsupported boundary condition {self.bc!r}")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return -self.half_width + (np.arange(self.n_cells) + 0.5) * self.dx


@dataclass
class LineField1D:
    grid: LineGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError("one value per cell required")

    def integral(self) -> float:
        return float(self.values.sum()) * self.grid.dx


@dataclass
class LineState:
    """Viscous-system state: density, velocity, current time."""

    grid: LineGrid
    rho: np.ndarray
    u: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.rho = np.asarray(self.rho, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        n = self.grid.n_cells
        if self.rho.shape != (n,) or self.u.shape != (n,):
            raise ValueError("rho and u must have one value per cell")
        if self.rho.min() < -1e-12:
            raise ValueError("density below the admissible round-off band")

    def mass(self) -> float:
        return float(self.rho.sum()) * self.grid.dx

    def copy(self) -> "LineState":
        return LineState(self.grid, self.rho.copy(), self.u.copy(), self.time)


@dataclass
class PMState:
    """Diffusion-equation state (no velocity variable)."""

    grid: LineGrid
    rho: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.rho = np.asarray(self.rho, dtype=float)
        if self.rho.shape != (self.grid.n_cells,):
            raise ValueError("one value per cell required")

    def mass(self) -> float:
        return float(self.rho.sum()) * self.grid.dx

    def copy(self) -> "PMState":
        return PMState(self.grid, self.rho.copy(), self.time)


# ---------------------------------------------------------------------------
# initial data


def _case_profiles(case: int):
    if case == 1:
        rho0 = lambda x: 0.2 / (1.0 + x ** 2)
        drho0 = lambda x: -0.4 * x / (1.0 + x ** 2) ** 2
    elif case == 2:
        rho0 = lambda x: 0.2 / (1.0 + (x - 10.0) ** 2) + 0.2 / (1.0 + (x + 10.0) ** 2)
        drho0 = lambda x: (-0.4 * (x - 10.0) / (1.0 + (x - 10.0) ** 2) ** 2
                           - 0.4 * (x + 10.0) / (1.0 + (x + 10.0) ** 2) ** 2)
    else:
        raise ValueError("case must be 1 or 2")
    return rho0, drho0


def initial_case(case: int, c: float, grid: LineGrid) -> LineState:
    """Bump initial data with velocity u0 = c * rho0_x (analytic derivative).

    Case 1 is a single bump 0.2/(1+x^2); case 2 superposes two bumps
    centered at +-10.  The momentum ratio convention m0/rho0 = c rho0_x
    makes v0 = u0 + rho0_x = (c+1) rho0_x, vanishing at c = -1.
    """
    rho0, drho0 = _case_profiles(case)
    x = grid.centers
    return LineState(grid, rho0(x), c * drho0(x), 0.0)


# ---------------------------------------------------------------------------
# compiled Newton kernels


@njit(cache=True)
def _vacuum_blend(rl, rr, theta):
    """Weight of the low-density flux dissipation: 1 at vacuum, 0 above theta."""
    m = rl if rl < rr else rr
    if theta <= 0.0 or m >= theta:
        return 0.0
    w = 1.0 - m / theta
    if w < 0.0:
        return 0.0
    return w


@njit(cache=True)
def _ns_residual(rho_o, u_o, rho, u, dt, dx, theta, outflow, r_out):
    """Residual of the fully implicit step with u_x = 0 walls.

    Central second-order fluxes; the fluxes carry a local Lax-Friedrichs
    dissipation ramped in below density theta so that near-vacuum cells
    cannot undershoot zero.  With ``outflow`` nonzero, boundary faces pass
    outward-directed advective flux (upwind), mimicking the line problem
    whose tails keep travelling past the truncation; otherwise the walls
    are closed (exact mass conservation).
    """
    n = rho.shape[0]
    for i in range(n):
        # faces i (left) and i+1 (right)
        f_rho_l = 0.0
        f_rho_r = 0.0
        f_m_l = 0.0
        f_m_r = 0.0
        v_l = 0.0
        v_r = 0.0
        if outflow != 0:
            if i == 0 and u[0] < 0.0:
                f_rho_l = rho[0] * u[0]
                f_m_l = rho[0] * u[0] * u[0]
            if i == n - 1 and u[n - 1] > 0.0:
                f_rho_r = rho[n - 1] * u[n - 1]
                f_m_r = rho[n - 1] * u[n - 1] * u[n - 1]
        if i > 0:
            f_rho_l = 0.5 * (rho[i - 1] * u[i - 1] + rho[i] * u[i])
            lam = abs(0.5 * (u[i - 1] + u[i])) * _vacuum_blend(rho[i - 1], rho[i], theta)
            f_rho_l -= 0.5 * lam * (rho[i] - rho[i - 1])
            f_m_l = 0.5 * (rho[i - 1] * u[i - 1] ** 2 + rho[i] * u[i] ** 2)
            f_m_l -= 0.5 * lam * (rho[i] * u[i] - rho[i - 1] * u[i - 1])
            mu = (0.5 * (rho[i - 1] + rho[i])) ** 2
            if mu < MU_FLOOR:
                mu = MU_FLOOR
            v_l = mu * (u[i] - u[i - 1]) / dx
        if i < n - 1:
            f_rho_r = 0.5 * (rho[i] * u[i] + rho[i + 1] * u[i + 1])
            lam = abs(0.5 * (u[i] + u[i + 1])) * _vacuum_blend(rho[i], rho[i + 1], theta)
            f_rho_r -= 0.5 * lam * (rho[i + 1] - rho[i])
            f_m_r = 0.5 * (rho[i] * u[i] ** 2 + rho[i + 1] * u[i + 1] ** 2)
            f_m_r -= 0.5 * lam * (rho[i + 1] * u[i + 1] - rho[i] * u[i])
            mu = (0.5 * (rho[i] + rho[i + 1])) ** 2
            if mu < MU_FLOOR:
                mu = MU_FLOOR
            v_r = mu * (u[i + 1] - u[i]) / dx
        r_out[i, 0] = (rho[i] - rho_o[i]) / dt + (f_rho_r - f_rho_l) / dx
        r_out[i, 1] = ((rho[i] * u[i] - rho_o[i] * u_o[i]) / dt
                       + (f_m_r - f_m_l) / dx - (v_r - v_l) / dx)


@njit(cache=True)
def _ns_jacobian(rho, u, dt, dx, theta, outflow, a, b, c):
    """Block-tridiagonal Jacobian: a sub, b diag, c super, blocks 2x2.

    Unknown ordering per cell: (rho_i, u_i); equation ordering per cell:
    (mass, momentum).
    """
    n = rho.shape[0]
    a[:] = 0.0
    b[:] = 0.0
    c[:] = 0.0
    for i in range(n):
        b[i, 0, 0] = 1.0 / dt
        b[i, 1, 0] = u[i] / dt
        b[i, 1, 1] = rho[i] / dt
        if outflow != 0:
            if i == 0 and u[0] < 0.0:
                # -F_wall/dx with F_rho = rho u, F_m = rho u^2
                b[i, 0, 0] += -u[0] / dx
                b[i, 0, 1] += -rho[0] / dx
                b[i, 1, 0] += -u[0] * u[0] / dx
                b[i, 1, 1] += -2.0 * rho[0] * u[0] / dx
            if i == n - 1 and u[n - 1] > 0.0:
                b[i, 0, 0] += u[n - 1] / dx
                b[i, 0, 1] += rho[n - 1] / dx
                b[i, 1, 0] += u[n - 1] * u[n - 1] / dx
                b[i, 1, 1] += 2.0 * rho[n - 1] * u[n - 1] / dx
        if i > 0:
            # left face between i-1 and i (enters with minus sign)
            ubar = 0.5 * (u[i - 1] + u[i])
            wbl = _vacuum_blend(rho[i - 1], rho[i], theta)
            lam = abs(ubar) * wbl
            jump = rho[i] - rho[i - 1]
            # sub-gradients of lam: d|ubar|/du_j = 0.5 sign(ubar),
            # dw/drho_min = -1/theta inside the ramp
            su = 0.5 * (1.0 if ubar > 0.0 else (-1.0 if ubar < 0.0 else 0.0)) * wbl
            b[i, 0, 0] += -0.5 * u[i] / dx + 0.5 * lam / dx
            b[i, 0, 1] += -0.5 * rho[i] / dx + 0.5 * jump * su / dx
            a[i, 0, 0] += -0.5 * u[i - 1] / dx - 0.5 * lam / dx
            a[i, 0, 1] += -0.5 * rho[i - 1] / dx + 0.5 * jump * su / dx
            jump_m = rho[i] * u[i] - rho[i - 1] * u[i - 1]
            if 0.0 < wbl < 1.0:
                dlam = -abs(ubar) / theta  # d lam / d rho_min inside the ramp
                if rho[i - 1] <= rho[i]:
                    a[i, 0, 0] += 0.5 * jump * dlam / dx
                    a[i, 1, 0] += 0.5 * jump_m * dlam / dx
                else:
                    b[i, 0, 0] += 0.5 * jump * dlam / dx
                    b[i, 1, 0] += 0.5 * jump_m * dlam / dx
            b[i, 1, 0] += -0.5 * u[i] ** 2 / dx + 0.5 * lam * u[i] / dx
            b[i, 1, 1] += -rho[i] * u[i] / dx + 0.5 * lam * rho[i] / dx \
                + 0.5 * jump_m * su / dx
            a[i, 1, 0] += -0.5 * u[i - 1] ** 2 / dx - 0.5 * lam * u[i - 1] / dx
            a[i, 1, 1] += -rho[i - 1] * u[i - 1] / dx - 0.5 * lam * rho[i - 1] / dx \
                + 0.5 * jump_m * su / dx
            avg = 0.5 * (rho[i - 1] + rho[i])
            mu = avg * avg
            dmu = avg  # d mu / d rho_j = avg for both neighbours
            if mu < MU_FLOOR:
                mu = MU_FLOOR
                dmu = 0.0
            du = (u[i] - u[i - 1]) / dx
            # viscous flux at the left face enters R_m with +V_l/dx... sign:
            # R_m has -(v_r - v_l)/dx, so +v_l/dx
            b[i, 1, 0] += dmu * du / dx
            a[i, 1, 0] += dmu * du / dx
            b[i, 1, 1] += mu / (dx * dx)
            a[i, 1, 1] += -mu / (dx * dx)
        if i < n - 1:
            ubar = 0.5 * (u[i] + u[i + 1])
            wbl = _vacuum_blend(rho[i], rho[i + 1], theta)
            lam = abs(ubar) * wbl
            jump = rho[i + 1] - rho[i]
            su = 0.5 * (1.0 if ubar > 0.0 else (-1.0 if ubar < 0.0 else 0.0)) * wbl
            b[i, 0, 0] += 0.5 * u[i] / dx + 0.5 * lam / dx
            b[i, 0, 1] += 0.5 * rho[i] / dx - 0.5 * jump * su / dx
            c[i, 0, 0] += 0.5 * u[i + 1] / dx - 0.5 * lam / dx
            c[i, 0, 1] += 0.5 * rho[i + 1] / dx - 0.5 * jump * su / dx
            jump_m = rho[i + 1] * u[i + 1] - rho[i] * u[i]
            if 0.0 < wbl < 1.0:
                dlam = -abs(ubar) / theta
                if rho[i] <= rho[i + 1]:
                    b[i, 0, 0] += -0.5 * jump * dlam / dx
                    b[i, 1, 0] += -0.5 * jump_m * dlam / dx
                else:
                    c[i, 0, 0] += -0.5 * jump * dlam / dx
                    c[i, 1, 0] += -0.5 * jump_m * dlam / dx
            b[i, 1, 0] += 0.5 * u[i] ** 2 / dx + 0.5 * lam * u[i] / dx
            b[i, 1, 1] += rho[i] * u[i] / dx + 0.5 * lam * rho[i] / dx \
                - 0.5 * jump_m * su / dx
            c[i, 1, 0] += 0.5 * u[i + 1] ** 2 / dx - 0.5 * lam * u[i + 1] / dx
            c[i, 1, 1] += rho[i + 1] * u[i + 1] / dx - 0.5 * lam * rho[i + 1] / dx \
                - 0.5 * jump_m * su / dx
            avg = 0.5 * (rho[i] + rho[i + 1])
            mu = avg * avg
            dmu = avg
            if mu < MU_FLOOR:
                mu = MU_FLOOR
                dmu = 0.0
            du = (u[i + 1] - u[i]) / dx
            # -v_r/dx contribution
            b[i, 1, 0] += -dmu * du / dx
            c[i, 1, 0] += -dmu * du / dx
            b[i, 1, 1] += mu / (dx * dx)
            c[i, 1, 1] += -mu / (dx * dx)


@njit(cache=True)
def _block_thomas(a, b, c, r, cp, rp, x):
    """Solve the block-tridiagonal system (2x2 blocks) in place."""
    n = b.shape[0]
    det = b[0, 0, 0] * b[0, 1, 1] - b[0, 0, 1] * b[0, 1, 0]
    i00 = b[0, 1, 1] / det
    i01 = -b[0, 0, 1] / det
    i10 = -b[0, 1, 0] / det
    i11 = b[0, 0, 0] / det
    for k in range(2):
        cp[0, 0, k] = i00 * c[0, 0, k] + i01 * c[0, 1, k]
        cp[0, 1, k] = i10 * c[0, 0, k] + i11 * c[0, 1, k]
    rp[0, 0] = i00 * r[0, 0] + i01 * r[0, 1]
    rp[0, 1] = i10 * r[0, 0] + i11 * r[0, 1]
    for i in range(1, n):
        m00 = b[i, 0, 0] - a[i, 0, 0] * cp[i - 1, 0, 0] - a[i, 0, 1] * cp[i - 1, 1, 0]
        m01 = b[i, 0, 1] - a[i, 0, 0] * cp[i - 1, 0, 1] - a[i, 0, 1] * cp[i - 1, 1, 1]
        m10 = b[i, 1, 0] - a[i, 1, 0] * cp[i - 1, 0, 0] - a[i, 1, 1] * cp[i - 1, 1, 0]
        m11 = b[i, 1, 1] - a[i, 1, 0] * cp[i - 1, 0, 1] - a[i, 1, 1] * cp[i - 1, 1, 1]
        det = m00 * m11 - m01 * m10
        i00 = m11 / det
        i01 = -m01 / det
        i10 = -m10 / det
        i11 = m00 / det
        for k in range(2):
            cc0 = c[i, 0, k]
            cc1 = c[i, 1, k]
            cp[i, 0, k] = i00 * cc0 + i01 * cc1
            cp[i, 1, k] = i10 * cc0 + i11 * cc1
        t0 = r[i, 0] - a[i, 0, 0] * rp[i - 1, 0] - a[i, 0, 1] * rp[i - 1, 1]
        t1 = r[i, 1] - a[i, 1, 0] * rp[i - 1, 0] - a[i, 1, 1] * rp[i - 1, 1]
        rp[i, 0] = i00 * t0 + i01 * t1
        rp[i, 1] = i10 * t0 + i11 * t1
    x[n - 1, 0] = rp[n - 1, 0]
    x[n - 1, 1] = rp[n - 1, 1]
    for i in range(n - 2, -1, -1):
        x[i, 0] = rp[i, 0] - cp[i, 0, 0] * x[i + 1, 0] - cp[i, 0, 1] * x[i + 1, 1]
        x[i, 1] = rp[i, 1] - cp[i, 1, 0] * x[i + 1, 0] - cp[i, 1, 1] * x[i + 1, 1]


@njit(cache=True)
def _ns_step_kernel(rho_o, u_o, rho, u, dt, dx, theta, outflow, tol, max_iter):
    """Full Newton solve of one implicit step; returns (status, residual, iters).

    status 0: converged; 1: iteration limit without reaching tol.
    """
    n = rho.shape[0]
    r = np.empty((n, 2))
    a = np.empty((n, 2, 2))
    b = np.empty((n, 2, 2))
    c = np.empty((n, 2, 2))
    cp = np.empty((n, 2, 2))
    rp = np.empty((n, 2))
    delta = np.empty((n, 2))
    for it in range(max_iter):
        _ns_residual(rho_o, u_o, rho, u, dt, dx, theta, outflow, r)
        res = 0.0
        for i in range(n):
            if abs(r[i, 0]) > res:
                res = abs(r[i, 0])
            if abs(r[i, 1]) > res:
                res = abs(r[i, 1])
        if res < tol:
            return 0, res, it
        _ns_jacobian(rho, u, dt, dx, theta, outflow, a, b, c)
        _block_thomas(a, b, c, r, cp, rp, delta)
        for i in range(n):
            rho[i] -= delta[i, 0]
            u[i] -= delta[i, 1]
    _ns_residual(rho_o, u_o, rho, u, dt, dx, theta, outflow, r)
    res = 0.0
    for i in range(n):
        if abs(r[i, 0]) > res:
            res = abs(r[i, 0])
        if abs(r[i, 1]) > res:
            res = abs(r[i, 1])
    if res < tol:
        return 0, res, max_iter
    return 1, res, max_iter


@njit(cache=True)
def _pm_step_kernel(rho_o, rho, dt, dx, tol, max_iter):
    """Newton solve of the implicit diffusion step rho_t = (rho^2/2)_xx."""
    n = rho.shape[0]
    r = np.empty(n)
    lo = np.empty(n)
    di = np.empty(n)
    up = np.empty(n)
    cp = np.empty(n)
    rp = np.empty(n)
    for it in range(max_iter + 1):
        res = 0.0
        for i in range(n):
            g_l = 0.0
            g_r = 0.0
            if i > 0:
                g_l = (rho[i] ** 2 - rho[i - 1] ** 2) / (2.0 * dx)
            if i < n - 1:
                g_r = (rho[i + 1] ** 2 - rho[i] ** 2) / (2.0 * dx)
            r[i] = (rho[i] - rho_o[i]) / dt - (g_r - g_l) / dx
            if abs(r[i]) > res:
                res = abs(r[i])
        if res < tol:
            return 0, res, it
        if it == max_iter:
            return 1, res, it
        for i in range(n):
            di[i] = 1.0 / dt
            lo[i] = 0.0
            up[i] = 0.0
            if i > 0:
                di[i] += rho[i] / (dx * dx)
                lo[i] += -rho[i - 1] / (dx * dx)
            if i < n - 1:
                di[i] += rho[i] / (dx * dx)
                up[i] += -rho[i + 1] / (dx * dx)
        # scalar Thomas
        cp[0] = up[0] / di[0]
        rp[0] = r[0] / di[0]
        for i in range(1, n):
            m = di[i] - lo[i] * cp[i - 1]
            cp[i] = up[i] / m
            rp[i] = (r[i] - lo[i] * rp[i - 1]) / m
        delta_last = rp[n - 1]
        rho[n - 1] -= delta_last
        prev = delta_last
        for i in range(n - 2, -1, -1):
            d = rp[i] - cp[i] * prev
            rho[i] -= d
            prev = d
    return 1, 1e300, max_iter


# ---------------------------------------------------------------------------
# python drivers


VACUUM_FRACTION = 0.02  # mass-flux dissipation ramps in below this times max rho


def ns_step(state: LineState, dt: float, tol: float = 1e-10,
            max_iter: int = 25, vacuum_fraction: float = VACUUM_FRACTION,
            outflow_walls: bool = False) -> LineState:
    """One implicit Euler step of the coupled system (Newton, analytic Jacobian).

    Raises ``NewtonDivergence`` with the final residual if the iteration
    stalls, and ``NegativeDensity`` if any cell drops below -1e-10.  Closed
    walls conserve mass exactly; ``outflow_walls`` lets outward-directed
    tails leave (leakage is the caller's to monitor).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho = state.rho.copy()
    u = state.u.copy()
    theta = vacuum_fraction * float(state.rho.max())
    status, res, _ = _ns_step_kernel(state.rho, state.u, rho, u, dt,
                                     state.grid.dx, theta,
                                     1 if outflow_walls else 0, tol, max_iter)
    if status != 0 or not (np.isfinite(rho).all() and np.isfinite(u).all()):
        raise NewtonDivergence(f"Newton stalled at residual {res:.3e}", res)
    if rho.min() < -1e-10:
        raise NegativeDensity(f"min rho = {rho.min():.3e}")
    np.clip(rho, 0.0, None, out=rho)
    return LineState(state.grid, rho, u, state.time + dt)


def ns_advance(state: LineState, dt: float, n_steps: int, tol: float = 1e-10,
               max_iter: int = 25, halving_depth: int = 8,
               vacuum_fraction: float = VACUUM_FRACTION,
               outflow_walls: bool = False) -> LineState:
    """Advance n_steps implicit steps, halving dt locally on Newton stalls."""
    grid = state.grid
    rho = state.rho.copy()
    u = state.u.copy()
    t = state.time
    flow = 1 if outflow_walls else 0

    def substep(r_old, u_old, h, depth):
        r_new = r_old.copy()
        u_new = u_old.copy()
        theta = vacuum_fraction * float(r_old.max())
        status, res, _ = _ns_step_kernel(r_old, u_old, r_new, u_new, h,
                                         grid.dx, theta, flow, tol, max_iter)
        if status == 0 and not (np.isfinite(r_new).all() and np.isfinite(u_new).all()):
            status, res = 1, float("nan")
        if status != 0:
            if depth >= halving_depth:
                raise NewtonDivergence(
                    f"Newton stalled at residual {res:.3e} (dt={h:.2e})", res)
            r_mid, u_mid = substep(r_old, u_old, 0.5 * h, depth + 1)
            return substep(r_mid, u_mid, 0.5 * h, depth + 1)
        return r_new, u_new

    for _ in range(n_steps):
        rho, u = substep(rho, u, dt, 0)
        t += dt
        if rho.min() < -1e-10:
            raise NegativeDensity(f"min rho = {rho.min():.3e} at t={t:.3f}")
        np.clip(rho, 0.0, None, out=rho)
    return LineState(grid, rho, u, t)


def pm_step(state: PMState, dt: float, tol: float = 1e-10,
            max_iter: int = 25) -> PMState:
    """One implicit Euler step of the degenerate diffusion equation."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho = state.rho.copy()
    status, res, _ = _pm_step_kernel(state.rho, rho, dt, state.grid.dx, tol,
                                     max_iter)
    if status != 0 or not np.isfinite(rho).all():
        raise NewtonDivergence(f"Newton stalled at residual {res:.3e}", res)
    return PMState(state.grid, rho, state.time + dt)


def pm_advance(state: PMState, dt: float, n_steps: int, tol: float = 1e-10,
               max_iter: int = 25) -> PMState:
    rho = state.rho.copy()
    t = state.time
    for _ in range(n_steps):
        rho_new = rho.copy()
        status, res, _ = _pm_step_kernel(rho, rho_new, dt, state.grid.dx, tol,
                                         max_iter)
        if status != 0 or not np.isfinite(rho_new).all():
            raise NewtonDivergence(f"Newton stalled at residual {res:.3e}", res)
        rho = rho_new
        t += dt
    return PMState(state.grid, rho, t)


# ---------------------------------------------------------------------------
# reference solution and distances


def barenblatt(x: np.ndarray, t: float, a: float = 2.0) -> np.ndarray:
    """Self-similar source solution of rho_t = (rho^2/2)_xx.

    The ansatz rho = t**(-1/3) F(x t**(-1/3)) gives F' = -xi/3, so
    F(xi) = max(a - xi^2/6, 0); support radius sqrt(6 a) t**(1/3).
    """
    if not t > 0:
        raise ValueError("the self-similar profile needs t > 0")
    xi = np.asarray(x, dtype=float) * t ** (-1.0 / 3.0)
    return t ** (-1.0 / 3.0) * np.maximum(a - xi ** 2 / 6.0, 0.0)


def hminus1_distance(f: LineField1D, g: LineField1D, mass_tol: float = 1e-8,
                     project_mean: bool = False) -> float:
    """L^2 norm of the primitive of f - g (homogeneous H^-1 surrogate).

    The primitive is accumulated from the left wall over cell averages and
    evaluated at cell faces; equal masses are required so the primitive
    returns to zero at the right wall (``MassMismatch`` otherwise).
    ``project_mean`` first removes the mean of the difference, comparing
    shapes when a small mass offset (e.g. monitored wall leakage) is
    expected.
    """
    if f.grid != g.grid:
        raise ValueError("fields must share one grid")
    dx = f.grid.dx
    diff = f.values - g.values
    if project_mean:
        diff = diff - diff.mean()
    prim = np.concatenate([[0.0], np.cumsum(diff) * dx])  # at faces 0..n
    if abs(prim[-1]) > mass_tol:
        raise MassMismatch(f"mass difference {prim[-1]:.3e} exceeds {mass_tol:.1e}")
    # trapezoid on face values
    return float(np.sqrt(dx * (0.5 * prim[0] ** 2 + (prim[1:-1] ** 2).sum()
                               + 0.5 * prim[-1] ** 2)))


# ---------------------------------------------------------------------------
# experiments


@dataclass
class CSweepResult:
    """One (case, c) run: snapshots of (rho, u, pm rho) and distance series."""

    case: int
    c: float
    grid: LineGrid
    snapshot_times: list
    rho_snapshots: dict  # t -> array
    u_snapshots: dict
    pm_snapshots: dict
    series_times: np.ndarray
    hminus1_series: np.ndarray
    linf_gap_series: np.ndarray
    wall_time: float
    error: Optional[str] = None
    mass_leakage: float = 0.0  # tail mass gone through the outflow walls


def run_pm_case(case: int, grid: LineGrid, dt: float, sample_times: Sequence[float]):
    """Diffusion trajectory from the case density; returns {t: rho}."""
    sample_times = sorted(set(float(t) for t in sample_times))
    state = PMState(grid, initial_case(case, -1.0, grid).rho.copy(), 0.0)
    out = {}
    t = 0.0
    if sample_times and sample_times[0] <= 1e-12:
        out[sample_times[0]] = state.rho.copy()
        sample_times = sample_times[1:]
    for target in sample_times:
        n_steps = int(round((target - t) / dt))
        if n_steps > 0:
            state = pm_advance(state, dt, n_steps)
        t = target
        out[target] = state.rho.copy()
    return out


def run_ns_case(case: int, c: float, grid: LineGrid, dt: float,
                sample_times: Sequence[float], outflow_walls: bool = True):
    """Viscous trajectory for one c; returns {t: (rho, u)}.

    Comparison experiments default to outflow walls: the problem lives on
    the whole line and outward-travelling tails must not pile against the
    truncation (the leaked mass is visible as the difference of the
    snapshots' integrals).
    """
    sample_times = sorted(set(float(t) for t in sample_times))
    state = initial_case(case, c, grid)
    out = {}
    t = 0.0
    if sample_times and sample_times[0] <= 1e-12:
        out[sample_times[0]] = (state.rho.copy(), state.u.copy())
        sample_times = sample_times[1:]
    for target in sample_times:
        n_steps = int(round((target - t) / dt))
        if n_steps > 0:
            state = ns_advance(state, dt, n_steps, outflow_walls=outflow_walls)
        t = target
        out[target] = (state.rho.copy(), state.u.copy())
    return out


def c_sweep(case: int, c_list: Sequence[float], snapshot_times: Sequence[float],
            grid: LineGrid, dt: float, n_series: int = 41,
            progress: Optional[Callable[[str], None]] = None) -> list[CSweepResult]:
    """Viscous-vs-diffusion comparison over a list of c values.

    For every c the viscous system is advanced with snapshots at the
    requested times plus ``n_series`` distance samples; the diffusion
    solution from the same density is computed once and shared.  A failing
    c value is reported in its result's ``error`` field without aborting
    the others.
    """
    t_end = max(snapshot_times)
    series_times = np.linspace(0.0, t_end, n_series)
    all_times = sorted(set(np.concatenate([series_times, snapshot_times]).tolist()))
    pm_by_t = run_pm_case(case, grid, dt, all_times)

    results = []
    for c in c_list:
        t0 = _time.perf_counter()
        try:
            ns_by_t = run_ns_case(case, c, grid, dt, all_times)
            h_series = []
            gap_series = []
            for t in series_times:
                rho_ns = ns_by_t[float(t)][0]
                rho_pm = pm_by_t[float(t)]
                h_series.append(hminus1_distance(LineField1D(grid, rho_ns),
                                                 LineField1D(grid, rho_pm),
                                                 mass_tol=1e-2, project_mean=True))
                gap_series.append(float(np.abs(rho_ns - rho_pm).max()))
            t_last = max(float(t) for t in ns_by_t)
            leak = float((ns_by_t[0.0][0].sum() - ns_by_t[t_last][0].sum()) * grid.dx) \
                if 0.0 in ns_by_t else 0.0
            res = CSweepResult(
                case=case, c=float(c), grid=grid,
                snapshot_times=[float(t) for t in snapshot_times],
                rho_snapshots={float(t): ns_by_t[float(t)][0] for t in snapshot_times},
                u_snapshots={float(t): ns_by_t[float(t)][1] for t in snapshot_times},
                pm_snapshots={float(t): pm_by_t[float(t)] for t in snapshot_times},
                series_times=series_times,
                hminus1_series=np.array(h_series),
                linf_gap_series=np.array(gap_series),
                wall_time=_time.perf_counter() - t0,
                mass_leakage=leak)
        except Exception as exc:  # per-c isolation
            res = CSweepResult(case=case, c=float(c), grid=grid,
                               snapshot_times=[float(t) for t in snapshot_times],
                               rho_snapshots={}, u_snapshots={}, pm_snapshots={},
                               series_times=series_times,
                               hminus1_series=np.array([]),
                               linf_gap_series=np.array([]),
                               wall_time=_time.perf_counter() - t0,
                               error=f"{type(exc).__name__}: {exc}")
        if progress is not None:
            status = res.error or f"ok in {res.wall_time:.1f}s"
            progress(f"case {case} c={c}: {status}")
        results.append(res)
    return results


def eta_rate_study(eta_fractions: Sequence[float], t_end: float, grid: LineGrid,
                  dt: float, case: int = 1, n_series: int = 41,
                  side: float = 1.0) -> dict:
    """Scaling of the viscous-to-diffusion distance with eta = ||sqrt(rho0) v0||.

    v0 = (c+1) rho0_x, so c = -1 + side*frac realizes eta = frac * eta_ref
    with eta_ref = ||sqrt(rho0) rho0_x||_{L^2}.  For each eta the study
    records sup over positive sample times of distance/sqrt(t), then fits
    the log-log slope against eta; the distance bound predicts exponent 1/2
    as an upper bound.
    """
    x = grid.centers
    rho0_fn, drho0_fn = _case_profiles(case)
    eta_ref = float(np.sqrt((rho0_fn(x) * drho0_fn(x) ** 2).sum() * grid.dx))

    rows = []
    for frac in eta_fractions:
        c = -1.0 + side * frac
        res = c_sweep(case, [c], [t_end], grid, dt, n_series=n_series)[0]
        if res.error:
            raise RuntimeError(f"eta study cell failed: {res.error}")
        t = res.series_times
        pos = t > 0
        sup_ratio = float((res.hminus1_series[pos] / np.sqrt(t[pos])).max())
        rows.append({"eta": frac * eta_ref, "c": c, "sup_dist_over_sqrt_t": sup_ratio})

    etas = np.array([r["eta"] for r in rows])
    sups = np.array([r["sup_dist_over_sqrt_t"] for r in rows])
    slope = float(np.polyfit(np.log(etas), np.log(sups), 1)[0])
    return {"rows": rows, "slope": slope, "eta_ref": eta_ref, "t_end": t_end,
            "note": "distance bound is an upper estimate; slopes above 1/2 "
                    "indicate faster-than-certified convergence"}


# ---------------------------------------------------------------------------
# output


def write_sweep_csvs(results: list[CSweepResult], out_dir) -> None:
    """Per-run CSV `t, x, rho, u, rho_pm` plus a summary `c, t, h_minus1, linf_gap`."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "c", "t", "h_minus1", "linf_gap", "error"])
        for res in results:
            if res.error:
                w.writerow([res.case, f"{res.c:.17g}", "", "", "", res.error])
                continue
            for t, h, g in zip(res.series_times, res.hminus1_series,
                               res.linf_gap_series):
                w.writerow([res.case, f"{res.c:.17g}", f"{t:.17g}", f"{h:.17g}",
                            f"{g:.17g}", ""])
    for res in results:
        if res.error:
            continue
        path = os.path.join(out_dir, f"case{res.case}_c{res.c:+.2f}.csv")
        x = res.grid.centers
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "rho", "u", "rho_pm"])
            for t in res.snapshot_times:
                rho = res.rho_snapshots[t]
                u = res.u_snapshots[t]
                pm = res.pm_snapshots[t]
                for j in range(len(x)):
                    w.writerow([f"{t:.17g}", f"{x[j]:.17g}", f"{rho[j]:.17g}",
                                f"{u[j]:.17g}", f"{pm[j]:.17g}"])
