"""Real symmetric spherical harmonic basis and exact sphere quadrature.

Convention (fixed once, used everywhere): for even degree l and order m,

    m = 0:  Y_l0  = N_l0 P_l(cos theta)
    m > 0:  Y_lm  = sqrt(2) N_lm P_l^m(cos theta) cos(m phi)
    m < 0:  Y_lm  = sqrt(2) N_l|m| P_l^|m|(cos theta) sin(|m| phi)

with N_lm = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!) and P_l^m the associated
Legendre functions including the Condon-Shortley phase (scipy's lpmv).
The basis is orthonormal on the sphere and, restricted to even l, invariant
under the antipodal map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import lpmv

from .errors import ValidationError

UNIT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class ShBasisSpec:
    """Even-degree real symmetric SH basis truncated at l_max."""

    l_max: int
    orders: tuple[tuple[int, int], ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.l_max < 0 or self.l_max % 2 != 0:
            raise ValidationError(f"l_max must be even and >= 0, got {self.l_max}")
        orders = tuple(
            (l, m) for l in range(0, self.l_max + 1, 2) for m in range(-l, l + 1)
        )
        object.__setattr__(self, "orders", orders)

    @property
    def n_basis(self) -> int:
        return (self.l_max + 1) * (self.l_max + 2) // 2

    def index_of(self, l: int, m: int) -> int:
        return self.orders.index((l, m))


def check_unit_directions(dirs: np.ndarray) -> np.ndarray:
    """Return dirs as a (n, 3) float64 array, raising if any is not unit length."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if dirs.ndim != 2 or dirs.shape[1] != 3:
        raise ValidationError(f"directions must have shape (n, 3), got {dirs.shape}")
    sq = np.einsum("ij,ij->i", dirs, dirs)
    bad = np.abs(sq - 1.0) > UNIT_NORM_TOL
    if np.any(bad):
        raise ValidationError(
            f"{int(bad.sum())} direction(s) are not unit vectors "
            f"(max |v.v - 1| = {np.abs(sq - 1.0).max():.3e})"
        )
    return dirs


def _norm_lm(l: int, m: int) -> float:
    # m >= 0 here
    return math.sqrt(
        (2 * l + 1) / (4.0 * math.pi) * math.factorial(l - m) / math.factorial(l + m)
    )


def eval_sh_matrix(dirs: np.ndarray, spec: ShBasisSpec) -> np.ndarray:
    """Evaluate the real symmetric SH basis at unit directions.

    Returns a (n_dirs, L) matrix whose column (l, m) follows spec.orders.
    """
    dirs = check_unit_directions(dirs)
    if dirs.shape[0] == 0:
        raise ValidationError("direction list is empty")
    ct = np.clip(dirs[:, 2], -1.0, 1.0)
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    out = np.empty((dirs.shape[0], spec.n_basis))
    for j, (l, m) in enumerate(spec.orders):
        am = abs(m)
        col = _norm_lm(l, am) * lpmv(am, l, ct)
        if m > 0:
            col = math.sqrt(2.0) * col * np.cos(m * phi)
        elif m < 0:
            col = math.sqrt(2.0) * col * np.sin(am * phi)
        out[:, j] = col
    return out


def sh_l0_values(l_max: int, t: np.ndarray) -> np.ndarray:
    """Evaluate Y_l0 as a function of cos(theta) for every even l <= l_max.

    Returns an array of shape (n_even_l, len(t)); used for expanding
    azimuthally symmetric kernels.
    """
    t = np.asarray(t, dtype=np.float64)
    rows = [_norm_lm(l, 0) * lpmv(0, l, t) for l in range(0, l_max + 1, 2)]
    return np.vstack(rows)


def gauss_sphere_quadrature(degree: int, hemisphere: bool = False):
    """Gauss-Legendre x equiangular product quadrature on the unit sphere.

    Integrates all spherical polynomials up to the given degree exactly.
    With hemisphere=True, returns antipodal representatives with doubled
    weights; exact for even integrands of the same degree.
    """
    if degree < 0:
        raise ValidationError("quadrature degree must be >= 0")
    n_theta = max((degree + 2) // 2, 1)
    n_phi = max(degree + 1, 1)
    if n_phi % 2:
        n_phi += 1  # antipodal pairing needs an even azimuth count
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    ct = np.repeat(x, n_phi)
    st = np.sqrt(np.maximum(1.0 - ct**2, 0.0))
    ph = np.tile(phi, n_theta)
    pts = np.column_stack((st * np.cos(ph), st * np.sin(ph), ct))
    wts = np.repeat(w, n_phi) * (2.0 * np.pi / n_phi)
    if not hemisphere:
        return pts, wts
    eps = 1e-14
    north = ct > eps
    equator = (np.abs(ct) <= eps) & (ph < np.pi - 1e-12)
    keep = north | equator
    return pts[keep], 2.0 * wts[keep]
