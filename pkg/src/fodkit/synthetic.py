"""Synthetic experiment generators: ROI truths, noiseless signals, Rician noise.

Each region of interest holds two smoothly curving fiber bundles.  A bundle
is a family of quadratic arcs: membership of a voxel is a band |w| <= h on
the arc coordinate

    w(x, y, z) = y - sense*x - curv*(x - xc)^2 - z_shift*(z - zc) - offset

and the fiber direction is the arc tangent (1, m, z_slope) with
m = sense + 2*curv*(x - xc) + z_shift*z_slope, normalized.  Band parameters
below were tuned once so the voxel-type counts match the published layouts
exactly; the builder re-validates the counts on every call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError
from .harmonics import ShBasisSpec, eval_sh_matrix
from .signal_model import ResponseFunction, isotropic_response


@dataclass(frozen=True)
class ArcBundle:
    sense: int            # +1 runs along the main diagonal, -1 across it
    curvature: float
    band: tuple[float, float]   # membership: band[0] <= w <= band[1]
    offset: float = 0.0
    z_shift: float = 0.0
    z_slope: float = 0.0
    z_taper: float = 0.0  # tube-like narrowing away from the central slice

    def coordinate(self, x, y, z, xc, zc):
        return (y - self.sense * x - self.curvature * (x - xc) ** 2
                - self.z_shift * (z - zc) - self.offset)

    def member(self, x, y, z, xc, zc):
        w = self.coordinate(x, y, z, xc, zc)
        pinch = self.z_taper * (z - zc) ** 2
        return (w >= self.band[0] + pinch) & (w <= self.band[1] - pinch)

    def direction(self, x, z, xc):
        m = (self.sense + 2.0 * self.curvature * (x - xc)
             + self.z_shift * self.z_slope)
        d = np.stack([np.ones_like(m), m, np.full_like(m, self.z_slope)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass(frozen=True)
class RoiSpec:
    name: str
    dims: tuple[int, int, int]
    bundles: tuple[ArcBundle, ArcBundle]
    counts: tuple[int, int, int]   # expected (zero, one, two)-fiber voxels


@dataclass
class RoiTruth:
    """Per-voxel ground truth; voxels are C-order raveled over (x, y, z)."""

    dims: tuple[int, int, int]
    n_fibers: np.ndarray           # (V,) in {0, 1, 2}
    directions: np.ndarray         # (V, 2, 3); unused slots are zero
    fractions: np.ndarray          # (V, 2); unused slots are zero
    bundle_ids: np.ndarray         # (V, 2); source bundle per slot, -1 unused

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def counts(self) -> tuple[int, int, int]:
        return tuple(int((self.n_fibers == k).sum()) for k in (0, 1, 2))


ROI_2D_I = RoiSpec(
    "roi2d-1", (10, 10, 1),
    (
        ArcBundle(+1, 0.060, (-13.00, 13.00), 0.00),
        ArcBundle(-1, 0.055, (-1.68, 1.32), 9.00),
    ),
    (0, 72, 28),
)

ROI_2D_II = RoiSpec(
    "roi2d-2", (10, 10, 1),
    (
        ArcBundle(+1, 0.060, (-2.00, 2.00), 0.00),
        ArcBundle(-1, 0.055, (-3.12, 3.12), 9.00),
    ),
    (22, 66, 12),
)

ROI_3D = RoiSpec(
    "roi3d", (10, 10, 5),
    (
        ArcBundle(+1, 0.060, (-11.21, 5.51), 1.99, z_shift=1.02,
                  z_slope=0.80, z_taper=1.34),
        ArcBundle(-1, 0.055, (-7.13, 9.83), 9.95, z_shift=0.48,
                  z_slope=0.80, z_taper=1.26),
    ),
    (52, 163, 285),
)

_SPECS = {s.name: s for s in (ROI_2D_I, ROI_2D_II, ROI_3D)}


def roi_spec(name: str) -> RoiSpec:
    try:
        return _SPECS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown ROI {name!r}; choose from {sorted(_SPECS)}"
        ) from None


def make_roi(spec: RoiSpec | str) -> RoiTruth:
    """Build the ground-truth fiber field, validating the voxel-type counts."""
    if isinstance(spec, str):
        spec = roi_spec(spec)
    nx, ny, nz = spec.dims
    xc, zc = (nx - 1) / 2.0, (nz - 1) / 2.0
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    x, y, z = (a.astype(np.float64) for a in (ix, iy, iz))

    n_vox = nx * ny * nz
    n_fibers = np.zeros(n_vox, dtype=np.int64)
    directions = np.zeros((n_vox, 2, 3))
    fractions = np.zeros((n_vox, 2))
    bundle_ids = np.full((n_vox, 2), -1, dtype=np.int64)

    members = [b.member(x, y, z, xc, zc).ravel() for b in spec.bundles]
    dirs = [b.direction(x, z, xc).reshape(n_vox, 3) for b in spec.bundles]

    both = members[0] & members[1]
    only = [members[0] & ~members[1], members[1] & ~members[0]]
    n_fibers[both] = 2
    for k in range(2):
        n_fibers[only[k]] = np.maximum(n_fibers[only[k]], 1)
        directions[only[k], 0] = dirs[k][only[k]]
        fractions[only[k], 0] = 1.0
        bundle_ids[only[k], 0] = k
        directions[both, k] = dirs[k][both]
        bundle_ids[both, k] = k
    fractions[both] = 0.5

    truth = RoiTruth(spec.dims, n_fibers, directions, fractions, bundle_ids)
    if truth.counts() != spec.counts:
        raise ConfigurationError(
            f"{spec.name}: geometry produced voxel counts "
            f"{truth.counts()} (zero/one/two), expected {spec.counts}"
        )
    return truth


def true_fod_sh(truth: RoiTruth, l_max: int = 8) -> np.ndarray:
    """SH projection of each voxel's FOD: dirac sifting, unit total mass."""
    spec = ShBasisSpec(l_max)
    out = np.zeros((truth.n_voxels, spec.n_basis))
    iso = truth.n_fibers == 0
    out[iso, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for v in np.flatnonzero(~iso):
        k = truth.n_fibers[v]
        phi = eval_sh_matrix(truth.directions[v, :k], spec)
        out[v] = truth.fractions[v, :k] @ phi
    return out


def noiseless_signal(truth: RoiTruth, rf: ResponseFunction,
                     gradients: np.ndarray) -> np.ndarray:
    """Exact convolution signals, one row per voxel.

    Fibered voxels use the anisotropic kernel at each dirac direction;
    zero-fiber voxels use the unit-ratio kernel, constant over directions.
    """
    gradients = np.asarray(gradients, dtype=np.float64)
    out = np.empty((truth.n_voxels, gradients.shape[0]))
    iso_value = isotropic_response(rf).kernel(np.array([1.0]))[0]
    for v in range(truth.n_voxels):
        k = truth.n_fibers[v]
        if k == 0:
            out[v] = iso_value
        else:
            cos = gradients @ truth.directions[v, :k].T
            out[v] = rf.kernel(cos) @ truth.fractions[v, :k]
    return out


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")


def add_rician_noise(signals: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Rician-corrupt signals: sqrt((S + e1)^2 + e2^2), e ~ N(0, sigma).

    Rows are voxels; each voxel uses its own counter-based stream so the
    result is reproducible and independent of evaluation order.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    out = np.empty_like(signals)
    for v in range(signals.shape[0]):
        rng = np.random.Generator(
            np.random.Philox(key=spec.seed, counter=v << 128)
        )
        e = rng.normal(0.0, spec.sigma, size=(2, signals.shape[1]))
        out[v] = np.hypot(signals[v] + e[0], e[1])
    return out
