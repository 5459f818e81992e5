"""Symmetric spherical needlet frame and the SH-to-needlet transition matrix.

The frame consists of one constant function (spanning degree zero) plus, for
each level j = 1..j_max, needlets anchored at the nodes of a quadrature rule
that integrates products of the level's spherical harmonics exactly.  The
window b is the standard smooth bump construction with bandwidth factor 2:
b(x)^2 = f(x/2) - f(x) for a C-infinity step f that is 1 on [0, 1/2] and 0 on
[1, inf), so sum_j b(l/2^j)^2 telescopes to 1 for every l >= 1.

Restricted to even degrees <= l_max, the transition matrix C (one row per SH
basis function, one column per needlet) satisfies C C^T = I, which is the
tight-frame identity this module is built around.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import ConfigurationError, ValidationError
from .harmonics import ShBasisSpec, eval_sh_matrix, gauss_sphere_quadrature


def _bump_integral(upper: float) -> float:
    # the bump vanishes to all orders at the endpoints; quad's roundoff
    # warning at these tolerances is expected and harmless
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        return quad(lambda x: math.exp(-1.0 / (1.0 - x * x)), -1.0, upper,
                    epsabs=1e-15, epsrel=1e-14, limit=200)[0]


_BUMP_NORM = _bump_integral(1.0)


@lru_cache(maxsize=None)
def _smooth_step(u: float) -> float:
    """C-infinity ramp from 0 at u <= -1 to 1 at u >= 1."""
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return _bump_integral(u) / _BUMP_NORM


@lru_cache(maxsize=None)
def _flat_step(x: float) -> float:
    """1 on [0, 1/2], smooth descent on [1/2, 1], 0 beyond (bandwidth 2)."""
    if x < 0.0:
        raise ValidationError("window argument must be nonnegative")
    if x <= 0.5:
        return 1.0
    if x >= 1.0:
        return 0.0
    return _smooth_step(1.0 - 4.0 * (x - 0.5))


def window_value(x: float) -> float:
    """Needlet window b(x), supported on [1/2, 2] with b(1) = 1."""
    return math.sqrt(max(_flat_step(x / 2.0) - _flat_step(x), 0.0))


@dataclass(frozen=True)
class NeedletLevel:
    j: int
    nodes: np.ndarray       # (k, 3) antipodal representatives
    weights: np.ndarray     # (k,) cubature weights, hemisphere-doubled
    window: np.ndarray      # b(l / 2^j) for every even l <= l_max


@dataclass(frozen=True)
class NeedletFrame:
    l_max: int
    j_max: int
    levels: tuple[NeedletLevel, ...]

    @property
    def n_basis(self) -> int:
        """Total needlet count, constant function included."""
        return 1 + sum(lev.nodes.shape[0] for lev in self.levels)


def _level_degrees(j: int, l_max: int) -> list[int]:
    lo, hi = 2 ** (j - 1), 2 ** (j + 1)
    return [l for l in range(2, l_max + 1, 2) if lo < l < hi]


def build_needlet_frame(l_max: int) -> tuple[NeedletFrame, np.ndarray]:
    """Construct the symmetric needlet frame and its L x N transition matrix.

    Raises ConfigurationError if any level's quadrature fails the product
    exactness check (1e-9), which would break the tight-frame identity.
    """
    if l_max < 2 or l_max % 2 != 0:
        raise ValidationError(f"l_max must be even and >= 2, got {l_max}")
    spec = ShBasisSpec(l_max)
    j_max = math.ceil(math.log2(l_max))
    even_ls = np.array([l for l, m in spec.orders if m == 0])

    levels = []
    blocks = [np.zeros((spec.n_basis, 1))]
    blocks[0][0, 0] = 1.0  # constant needlet carries the degree-0 row
    for j in range(1, j_max + 1):
        degrees = _level_degrees(j, l_max)
        if not degrees:
            continue
        nodes, weights = gauss_sphere_quadrature(2 * max(degrees), hemisphere=True)
        phi = eval_sh_matrix(nodes, spec)
        active = np.isin([l for l, _ in spec.orders], degrees)
        gram = (phi[:, active] * weights[:, None]).T @ phi[:, active]
        err = np.abs(gram - np.eye(gram.shape[0])).max()
        if err > 1e-9:
            raise ConfigurationError(
                f"needlet level {j}: cubature not exact for degree products "
                f"(gram error {err:.2e})"
            )
        window = np.array([window_value(l / 2.0**j) for l in even_ls])
        per_row = window[np.searchsorted(even_ls, [l for l, _ in spec.orders])]
        block = (phi * per_row[None, :]).T * np.sqrt(weights)[None, :]
        levels.append(NeedletLevel(j, nodes, weights, window))
        blocks.append(block)

    frame = NeedletFrame(l_max, j_max, tuple(levels))
    c_matrix = np.hstack(blocks)
    return frame, c_matrix
