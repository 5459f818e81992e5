"""Peak detection on dense-grid FODs and the evaluation metrics.

Peak detection is a deliberately simple stand-in for the reference peak
picker: grid-adjacency local maxima, relative-value thresholding, antipodal
folding (free on a hemisphere grid), greedy angular merging, and an
isotropy test on the max/mean ratio.  With the SH coefficients available,
each grid peak is polished by a few Newton steps on the sphere, which
removes the grid-resolution quantization from angular errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .harmonics import ShBasisSpec, eval_sh_matrix
from .icosphere import SphericalGrid, folded_angles
from .narm import hellinger_distance
from .synthetic import RoiTruth


@dataclass(frozen=True)
class PeakConfig:
    rel_threshold: float = 0.25
    merge_angle_deg: float = 20.0
    iso_ratio: float = 2.5
    refine: bool = True

    def __post_init__(self):
        if not (0.0 <= self.rel_threshold < 1.0):
            raise ValidationError("rel_threshold must lie in [0, 1)")
        if self.iso_ratio < 1.0:
            raise ValidationError("iso_ratio must be >= 1")


@dataclass
class PeakSet:
    directions: np.ndarray   # (k, 3)
    values: np.ndarray       # (k,)
    isotropic: bool

    @property
    def count(self) -> int:
        return 0 if self.isotropic else self.directions.shape[0]


def _local_maxima(values: np.ndarray, grid: SphericalGrid) -> np.ndarray:
    """Strict local maxima over the grid 1-ring."""
    out = []
    for i, nbrs in enumerate(grid.neighbors):
        if all(values[i] > values[j] for j in nbrs):
            out.append(i)
    return np.array(out, dtype=np.int64)


def _refine_peak(f_sh: np.ndarray, spec: ShBasisSpec, x0: np.ndarray,
                 iters: int = 8) -> np.ndarray:
    """Newton polish of a peak direction using the SH expansion."""
    x = x0.copy()

    def value(p):
        return float(eval_sh_matrix(p[None] / np.linalg.norm(p), spec)[0] @ f_sh)

    h = 1e-4
    for _ in range(iters):
        # tangent basis at x
        a = np.array([1.0, 0.0, 0.0]) if abs(x[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(x, a)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(x, e1)

        def at(t1, t2):
            return value(x + t1 * e1 + t2 * e2)

        f0 = at(0, 0)
        g = np.array([(at(h, 0) - at(-h, 0)) / (2 * h),
                      (at(0, h) - at(0, -h)) / (2 * h)])
        h11 = (at(h, 0) - 2 * f0 + at(-h, 0)) / h**2
        h22 = (at(0, h) - 2 * f0 + at(0, -h)) / h**2
        h12 = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h**2)
        hess = np.array([[h11, h12], [h12, h22]])
        try:
            step = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            break
        if np.linalg.det(hess) <= 0 or not np.all(np.isfinite(step)):
            step = 0.05 * g  # fall back to a small ascent step
        nrm = np.linalg.norm(step)
        if nrm > 0.2:
            step *= 0.2 / nrm
        xn = x + step[0] * e1 + step[1] * e2
        xn /= np.linalg.norm(xn)
        if value(xn) < f0 - 1e-12:
            break
        x = xn
        if nrm < 1e-10:
            break
    if folded_angles(x, x0) > np.deg2rad(15.0):
        return x0  # refinement ran away; keep the grid point
    return x


def detect_peaks(dense: np.ndarray, grid: SphericalGrid, cfg: PeakConfig,
                 f_sh: np.ndarray | None = None) -> PeakSet:
    """Extract fiber directions from one voxel's dense-grid FOD values."""
    f = np.maximum(np.asarray(dense, dtype=np.float64), 0.0)
    if f.shape[0] != grid.n_points:
        raise ValidationError("FOD vector does not match the grid")
    fmax = f.max()
    if fmax <= 0.0:
        return PeakSet(np.empty((0, 3)), np.empty(0), True)
    if fmax / f.mean() < cfg.iso_ratio:
        return PeakSet(np.empty((0, 3)), np.empty(0), True)

    cand = _local_maxima(f, grid)
    cand = cand[f[cand] >= cfg.rel_threshold * fmax]
    if cand.size == 0:
        return PeakSet(np.empty((0, 3)), np.empty(0), True)
    order = cand[np.argsort(-f[cand], kind="stable")]

    merge = np.deg2rad(cfg.merge_angle_deg)
    dirs: list[np.ndarray] = []
    vals: list[float] = []
    spec = None
    if cfg.refine and f_sh is not None:
        spec = ShBasisSpec(int((math.isqrt(8 * f_sh.shape[0] + 1) - 3) // 2))
    for i in order:
        p = grid.points[i]
        if spec is not None:
            p = _refine_peak(f_sh, spec, p.copy())
        if any(folded_angles(p, q) < merge for q in dirs):
            continue
        v = float(f[i]) if spec is None else float(
            eval_sh_matrix(p[None], spec)[0] @ f_sh)
        dirs.append(p)
        vals.append(v)
    return PeakSet(np.array(dirs), np.array(vals), False)


def detect_peaks_field(dense: np.ndarray, grid: SphericalGrid, cfg: PeakConfig,
                       f_sh: np.ndarray | None = None) -> list[PeakSet]:
    """detect_peaks for every voxel row of a dense FOD field."""
    return [
        detect_peaks(dense[v], grid, cfg,
                     None if f_sh is None else f_sh[v])
        for v in range(dense.shape[0])
    ]


CLASS_NAMES = {0: "0-fiber", 1: "1-fiber", 2: "2-fiber"}


def classify_counts(peaks: list[PeakSet], truth: RoiTruth) -> dict:
    """Correct / over / under proportions per true fiber-count class."""
    out = {}
    detected = np.array([p.count for p in peaks])
    for k in (0, 1, 2):
        members = np.flatnonzero(truth.n_fibers == k)
        if members.size == 0:
            continue
        d = detected[members]
        co = float((d == k).sum()) / members.size
        ov = float((d > k).sum()) / members.size
        un = float((d < k).sum()) / members.size
        entry = {"count": int(members.size), "co": co, "ov": ov}
        if k > 0:
            entry["un"] = un
        out[CLASS_NAMES[k]] = entry
    return out


def _pairing_angles(detected: np.ndarray, true_dirs: np.ndarray) -> list[float]:
    """Optimal one-to-one matching angles (degrees), folded to [0, 90]."""
    k = true_dirs.shape[0]
    if k == 1:
        return [math.degrees(float(folded_angles(detected[0], true_dirs[0])))]
    a = np.degrees(folded_angles(detected[:, None, :], true_dirs[None, :, :]))
    straight = a[0, 0] + a[1, 1]
    crossed = a[0, 1] + a[1, 0]
    if straight <= crossed:
        return [float(a[0, 0]), float(a[1, 1])]
    return [float(a[0, 1]), float(a[1, 0])]


def angular_error(peaks: list[PeakSet], truth: RoiTruth) -> dict:
    """Median matched angle per class, over correctly-counted voxels only."""
    pools: dict[int, list[float]] = {1: [], 2: []}
    for v in range(truth.n_voxels):
        k = int(truth.n_fibers[v])
        if k == 0 or peaks[v].count != k:
            continue
        pools[k].extend(_pairing_angles(peaks[v].directions,
                                        truth.directions[v, :k]))
    return {
        CLASS_NAMES[k]: (float(np.median(vals)) if vals else math.nan)
        for k, vals in pools.items()
    }


def hellinger_summary(estimates: np.ndarray, reference: np.ndarray):
    """Mean and population SD of the per-voxel Hellinger distances."""
    if estimates.shape != reference.shape:
        raise ValidationError("fields must share the dense grid and voxels")
    d = np.array([
        hellinger_distance(estimates[v], reference[v])
        for v in range(estimates.shape[0])
    ])
    return float(d.mean()), float(d.std())
