"""Spherical convolution forward model: response kernels and design matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .harmonics import ShBasisSpec, sh_l0_values

#: Gauss-Legendre order for projecting response kernels onto Legendre terms.
RESPONSE_QUAD_ORDER = 96


@dataclass(frozen=True)
class ResponseFunction:
    """Axially symmetric single-fiber kernel R(cos theta).

    lambda_par is the diffusivity along the fiber axis, lambda_perp across it;
    signal attenuation is strongest along the axis.
    """

    s0: float = 1.0
    bval: float = 1000.0
    lambda_perp: float = 1.0e-3
    lambda_par: float = 1.0e-2

    def __post_init__(self):
        if self.s0 <= 0:
            raise ValidationError("s0 must be positive")
        if self.bval < 0:
            raise ValidationError("b-value must be nonnegative")
        if not (0 < self.lambda_perp <= self.lambda_par):
            raise ValidationError("diffusivities must satisfy 0 < perp <= par")

    def kernel(self, t: np.ndarray) -> np.ndarray:
        """Evaluate R at t = cos(theta) between gradient and fiber axis."""
        t = np.asarray(t, dtype=np.float64)
        exponent = self.lambda_perp * (1.0 - t * t) + self.lambda_par * t * t
        return self.s0 * np.exp(-self.bval * exponent)


def isotropic_response(rf: ResponseFunction) -> ResponseFunction:
    """Unit-ratio variant of rf, used for voxels without fiber bundles."""
    return ResponseFunction(rf.s0, rf.bval, rf.lambda_perp, rf.lambda_perp)


def response_sh_coeffs(rf: ResponseFunction, l_max: int,
                       order: int = RESPONSE_QUAD_ORDER) -> np.ndarray:
    """Legendre-line coefficients r_l = <R, Y_l0> for every even l <= l_max."""
    t, w = np.polynomial.legendre.leggauss(order)
    vals = rf.kernel(t)
    y_l0 = sh_l0_values(l_max, t)
    return 2.0 * np.pi * (y_l0 * vals[None, :]) @ w


def response_diagonal(r_l: np.ndarray, spec: ShBasisSpec) -> np.ndarray:
    """Per-basis-function diagonal sqrt(4 pi / (2l+1)) r_l in 2l+1 blocks."""
    even_ls = np.array([l for l, m in spec.orders if m == 0])
    if r_l.shape[0] != even_ls.shape[0]:
        raise ValidationError(
            f"need {even_ls.shape[0]} response coefficients, got {r_l.shape[0]}"
        )
    ls = np.array([l for l, _ in spec.orders])
    per_l = np.sqrt(4.0 * np.pi / (2.0 * ls + 1.0))
    return per_l * r_l[np.searchsorted(even_ls, ls)]


def build_design(phi: np.ndarray, rf: ResponseFunction,
                 c_matrix: np.ndarray) -> np.ndarray:
    """Design block Phi diag(R) C for one b-value's gradient directions."""
    n, big_l = phi.shape
    if c_matrix.shape[0] != big_l:
        raise ValidationError(
            f"SH dimension mismatch: Phi has {big_l} columns, "
            f"C has {c_matrix.shape[0]} rows"
        )
    l_max = int((np.sqrt(8 * big_l + 1) - 3) / 2)  # L = (l+1)(l+2)/2
    spec = ShBasisSpec(l_max)
    diag = response_diagonal(response_sh_coeffs(rf, l_max), spec)
    return (phi * diag[None, :]) @ c_matrix


def stack_designs(blocks: list[np.ndarray],
                  signals: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Row-concatenate per-b design blocks and measurement vectors in order."""
    if len(blocks) != len(signals):
        raise ValidationError("need one signal vector per design block")
    for k, (blk, sig) in enumerate(zip(blocks, signals)):
        sig = np.asarray(sig)
        if blk.shape[0] != sig.shape[-1]:
            raise ValidationError(
                f"block {k}: design has {blk.shape[0]} rows but signal "
                f"has {sig.shape[-1]} entries"
            )
    stacked = np.vstack(blocks)
    y = np.concatenate([np.asarray(s, dtype=np.float64) for s in signals], axis=-1)
    return stacked, y
