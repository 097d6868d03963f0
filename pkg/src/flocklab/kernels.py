"""Communication weights, their primitives, and the torus fractional-Laplacian symbol.

Three weight families are supported, and only these three:

* ``singular``: psi(s) = s**(-alpha), alpha > 0, blowing up at contact;
* ``regular``: psi(s) = (1+s)**(-alpha), the bounded counterpart;
* ``control_phi``: phi(s) = (1+s)**(-beta), the smooth weight fed with a
  squared argument by the chain-pattern controller.

All evaluators accept scalars or numpy arrays and are pure functions, safe
for unrestricted concurrent use.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelKind",
    "CommKernel",
    "singular",
    "regular",
    "control_phi",
    "psi",
    "psi_primitive",
    "frac_laplacian_symbol",
]


class KernelKind(enum.Enum):
    SINGULAR = "singular"
    REGULAR = "regular"
    CONTROL_PHI = "control_phi"


@dataclass(frozen=True)
class CommKernel:
    """Tagged communication weight.

    ``exponent`` is the decay exponent of the family (alpha for the
    singular/regular weights, beta for the control weight). It must be
    strictly positive; the weight itself is then strictly positive and
    non-increasing on its domain.
    """

    kind: KernelKind
    exponent: float

    def __post_init__(self) -> None:
        if not self.exponent > 0:
            raise ValueError(f"kernel exponent must be > 0, got {self.exponent!r}")

    @property
    def is_singular(self) -> bool:
        return self.kind is KernelKind.SINGULAR

    @property
    def alpha(self) -> float:
        return self.exponent

    def __call__(self, s):
        return psi(self, s)


def singular(alpha: float) -> CommKernel:
    """Weight s**(-alpha); weakly singular for alpha < 1, strongly for alpha >= 1."""
    return CommKernel(KernelKind.SINGULAR, float(alpha))


def regular(alpha: float) -> CommKernel:
    """Bounded weight (1+s)**(-alpha)."""
    return CommKernel(KernelKind.REGULAR, float(alpha))


def control_phi(beta: float) -> CommKernel:
    """Smooth control weight (1+s)**(-beta)."""
    return CommKernel(KernelKind.CONTROL_PHI, float(beta))


def psi(kernel: CommKernel, s):
    """Evaluate the communication weight at distance ``s``.

    Scalars come back as floats, arrays as arrays.  The singular family
    requires s > 0; the bounded families require s >= 0.  Violations raise
    ``ValueError``.
    """
    arr = np.asarray(s, dtype=float)
    if kernel.kind is KernelKind.SINGULAR:
        if np.any(arr <= 0.0):
            raise ValueError("singular weight is defined for s > 0 only")
        out = arr ** (-kernel.exponent)
    else:
        if np.any(arr < 0.0):
            raise ValueError("weight is defined for s >= 0 only")
        out = (1.0 + arr) ** (-kernel.exponent)
    return float(out) if out.ndim == 0 else out


def psi_primitive(alpha: float, s):
    """Primitive of the singular weight: s**(1-alpha)/(1-alpha), or ln s at alpha = 1.

    The logarithmic branch is selected by exact comparison ``alpha == 1``;
    nearby exponents get the power form, with no blending.  Requires s > 0.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha!r}")
    arr = np.asarray(s, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("primitive is defined for s > 0 only")
    if alpha == 1.0:
        out = np.log(arr)
    else:
        out = arr ** (1.0 - alpha) / (1.0 - alpha)
    return float(out) if out.ndim == 0 else out


def frac_laplacian_symbol(gamma: float, k):
    """Fourier multiplier |k|**gamma of the fractional Laplacian on the 1-torus."""
    if not 0.0 < gamma < 2.0:
        raise ValueError(f"gamma must lie in (0, 2), got {gamma!r}")
    arr = np.abs(np.asarray(k, dtype=float)) ** gamma
    return float(arr) if arr.ndim == 0 else arr


def sticking_time_quadrature(alpha: float, x0: float, first_integral: float,
                             rtol: float = 1e-10) -> float:
    """Time for the two-body gap to reach 0 from ``x0`` along dx/dt = C - Psi(x).

    ``first_integral`` is C = v0 + Psi(x0); the trajectory reaches 0 only for
    C <= 0, in which case the travel time is the quadrature of
    dt = dx / (Psi(x) - C) over (0, x0].  The integrand has an integrable
    endpoint singularity at 0 when C = 0.
    """
    from scipy.integrate import quad

    if not x0 > 0:
        raise ValueError("x0 must be > 0")
    if first_integral > 0:
        raise ValueError("gap never reaches 0 for positive first integral")

    def speed_inv(x):
        return 1.0 / (psi_primitive(alpha, x) - first_integral)

    if first_integral == 0.0:
        # dt = (1-alpha) x**(alpha-1) dx: exact endpoint handling via points.
        val, _ = quad(speed_inv, 0.0, x0, points=[0.0], epsrel=rtol, limit=200)
    else:
        val, _ = quad(speed_inv, 0.0, x0, epsrel=rtol, limit=200)
    return float(val)


def _psi_scalar_unchecked(kind: KernelKind, exponent: float, s: float) -> float:
    """Cheap scalar weight evaluation without domain checks (internal)."""
    if kind is KernelKind.SINGULAR:
        return s ** (-exponent)
    return (1.0 + s) ** (-exponent)


def psi_on_matrix(kernel: CommKernel, r: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Weight of a distance matrix, evaluated only where ``active`` is True.

    Inactive entries (self pairs, merged-class pairs) come back as 0.  The
    distance matrix is sanitised before the power so that inactive zeros do
    not produce infinities.
    """
    safe = np.where(active, r, 1.0)
    if kernel.kind is KernelKind.SINGULAR:
        w = safe ** (-kernel.exponent)
    else:
        w = (1.0 + safe) ** (-kernel.exponent)
    return np.where(active, w, 0.0)


def log_spaced(lo: float, hi: float, n: int) -> np.ndarray:
    """Logarithmically spaced sample points, used by kernel property checks."""
    return np.exp(np.linspace(math.log(lo), math.log(hi), n))
