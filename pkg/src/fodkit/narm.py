"""Nearest-neighbor adaptive regression smoothing of per-voxel FOD fits.

Starting from voxel-wise estimates, each step s grows a spherical
neighborhood of radius r^s, measures dissimilarity between the previous
step's dense-grid FODs (Hellinger distance on unit-normalized evaluations),
turns the dissimilarities into normalized location-times-similarity weights,
re-fits every active voxel against its neighborhood's weighted-average raw
signals, and freezes voxels whose minimum nearest-neighbor distance has
stopped decreasing.  Percentile rescaling speeds up under-smoothed voxels
and slows down already-smooth ones.

Ablation variants drop the stopping rule and/or the rescaling, replace the
stopping rule with the chi-square consecutive-change test, or switch the
similarity to a plain l2 distance (the multiscale-baseline configuration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .admm import (
    LambdaGrid,
    ProblemMatrices,
    SolverConfig,
    admm_batch,
    fit_lambda_path,
)
from .errors import ValidationError

SIMILARITIES = ("hellinger", "l2")
STOPPING_RULES = ("mnn", "chi2", "none")


@dataclass(frozen=True)
class NeighborhoodSchedule:
    """Radii d_s = growth^s for s = 1..steps (d_0 = 0 is the voxel itself)."""

    growth: float = 1.15
    steps: int = 10   # default for 2D regions; use 6 in 3D

    def __post_init__(self):
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if self.steps > 0 and self.growth <= 1.0:
            raise ValidationError(
                "growth must exceed 1 so radius-1 neighbors enter at step 1"
            )

    def radius(self, s: int) -> float:
        return self.growth**s


def default_schedule(dims: tuple[int, int, int]) -> NeighborhoodSchedule:
    return NeighborhoodSchedule(1.15, 6 if dims[2] > 1 else 10)


@dataclass(frozen=True)
class WeightConfig:
    """Similarity sharpness, rescaling percentile, and variant switches."""

    gamma: float = 2.0
    alpha: float = 0.15
    similarity: str = "hellinger"
    rescale: bool = True
    stopping: str = "mnn"
    chi2_scale: float | None = None
    lambda_mode: str = "path"   # "path" re-selects per step; "fixed" reuses step 0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValidationError("gamma must be positive")
        if not (0.0 <= self.alpha < 0.5):
            raise ValidationError("alpha must lie in [0, 0.5)")
        if self.similarity not in SIMILARITIES:
            raise ValidationError(f"similarity must be one of {SIMILARITIES}")
        if self.stopping not in STOPPING_RULES:
            raise ValidationError(f"stopping must be one of {STOPPING_RULES}")
        if self.stopping == "chi2" and (self.chi2_scale is None
                                        or self.chi2_scale <= 0):
            raise ValidationError("chi2 stopping needs a positive scale c")
        if self.lambda_mode not in ("path", "fixed"):
            raise ValidationError("lambda_mode must be 'path' or 'fixed'")


def variant_config(name: str, *, gamma: float = 2.0, alpha: float = 0.15,
                   c: float | None = None) -> WeightConfig:
    """Named estimator variants used throughout the experiments."""
    table = {
        "narm": dict(),
        "narm-no-stopping": dict(stopping="none"),
        "narm-no-rescaling": dict(rescale=False),
        "narm-no-stopping-rescaling": dict(stopping="none", rescale=False),
        "narm-chi2": dict(stopping="chi2", chi2_scale=c),
        "pmarm": dict(similarity="l2", rescale=False, stopping="chi2",
                      chi2_scale=c, gamma=20.0),
    }
    if name not in table:
        raise ValidationError(f"unknown variant {name!r}; one of {sorted(table)}")
    kwargs = dict(gamma=gamma, alpha=alpha)
    kwargs.update(table[name])
    return WeightConfig(**kwargs)


def hellinger_distance(f: np.ndarray, fp: np.ndarray) -> float:
    """Hellinger distance between two dense FOD vectors.

    Each input is clamped at zero and l2-normalized before the elementwise
    square root.  A zero vector is at distance 1 from any nonzero vector and
    0 from another zero vector.
    """
    f = np.maximum(np.asarray(f, dtype=np.float64), 0.0)
    fp = np.maximum(np.asarray(fp, dtype=np.float64), 0.0)
    nf, nfp = np.linalg.norm(f), np.linalg.norm(fp)
    if nf == 0.0 or nfp == 0.0:
        return 0.0 if nf == nfp else 1.0
    diff = np.sqrt(f / nf) - np.sqrt(fp / nfp)
    return float(np.linalg.norm(diff) / math.sqrt(2.0))


def location_kernel(u: np.ndarray) -> np.ndarray:
    return np.maximum(1.0 - np.asarray(u) ** 2, 0.0)


def similarity_kernel(u: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * np.asarray(u) ** 2)


def neighborhood_weights(rel_positions: np.ndarray, distances: np.ndarray,
                         d_s: float, gamma: float) -> np.ndarray:
    """Normalized weights over one voxel's neighborhood (self included)."""
    rel_positions = np.atleast_2d(rel_positions)
    num = location_kernel(np.linalg.norm(rel_positions, axis=1) / d_s)
    num = num * similarity_kernel(np.asarray(distances), gamma)
    total = num.sum()
    if total <= 0:
        raise ValidationError("neighborhood weights sum to zero")
    return num / total


def mnn_distance(distances: np.ndarray) -> float:
    """Minimum distance to the radius-1 neighbors; +inf for isolated voxels."""
    distances = np.asarray(distances, dtype=np.float64)
    return float(distances.min()) if distances.size else math.inf


def rescale_factors(mnn: np.ndarray, pct_low: float, pct_high: float) -> np.ndarray:
    """Per-voxel distance multipliers from the MNN percentile band.

    Voxels inside [pct_low, pct_high] are untouched; under-smoothed voxels
    (large MNN) have their distances shrunk, well-smoothed ones inflated.
    Zero or infinite MNN leaves the voxel untouched.
    """
    mnn = np.asarray(mnn, dtype=np.float64)
    out = np.ones_like(mnn)
    ok = np.isfinite(mnn) & (mnn > 0.0)
    m = mnn[ok]
    out[ok] = np.minimum(pct_high / m, 1.0) * np.maximum(pct_low / m, 1.0)
    return out


def stopping_check(mnn_s2: float, mnn_s1: float, mnn_s: float) -> bool:
    """Freeze when the MNN distance has stopped decreasing."""
    return min(mnn_s, mnn_s1) >= mnn_s2


def chi2_stop_threshold(step: int, c: float) -> float:
    """Upper (0.6/step) chi-square(1) point times c."""
    if step < 1 or c <= 0:
        raise ValidationError("need step >= 1 and c > 0")
    return float(chi2.isf(0.6 / step, 1)) * c


def pmarm_stopping_check(consecutive_dist: float, step: int, c: float) -> bool:
    """Freeze when consecutive estimates changed more than the threshold."""
    return consecutive_dist > chi2_stop_threshold(step, c)


@dataclass
class VoxelGrid:
    """Cartesian voxel lattice with an in-region mask (C-order linear index)."""

    dims: tuple[int, int, int]
    mask: np.ndarray | None = None
    coords: np.ndarray = field(init=False)

    def __post_init__(self):
        n = int(np.prod(self.dims))
        if self.mask is None:
            self.mask = np.ones(n, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (n,):
            raise ValidationError("mask must be flat over the voxel grid")
        ix, iy, iz = np.unravel_index(np.arange(n), self.dims)
        self.coords = np.column_stack((ix, iy, iz)).astype(np.int64)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def offsets_within(self, d: float) -> np.ndarray:
        """Integer offsets with 0 < |o| <= d, clipped to the grid extent."""
        r = int(math.floor(d))
        axes = [np.arange(-min(r, n - 1), min(r, n - 1) + 1) for n in self.dims]
        ox, oy, oz = np.meshgrid(*axes, indexing="ij")
        offs = np.column_stack((ox.ravel(), oy.ravel(), oz.ravel()))
        norms = np.linalg.norm(offs, axis=1)
        keep = (norms > 0) & (norms <= d)
        return offs[keep]

    def unit_offsets(self) -> np.ndarray:
        return self.offsets_within(1.0)

    def neighbor_index(self, offset) -> tuple[np.ndarray, np.ndarray]:
        """(valid, index) of each voxel's neighbor at the given offset."""
        nbr = self.coords + np.asarray(offset, dtype=np.int64)
        inside = np.all((nbr >= 0) & (nbr < np.array(self.dims)), axis=1)
        idx = np.zeros(self.n_voxels, dtype=np.int64)
        idx[inside] = np.ravel_multi_index(
            (nbr[inside, 0], nbr[inside, 1], nbr[inside, 2]), self.dims)
        valid = inside.copy()
        valid[inside] &= self.mask[idx[inside]]
        return valid, idx


@dataclass
class SmootherResult:
    beta: np.ndarray          # (V, N) final coefficients
    dense: np.ndarray         # (V, G) final dense-grid FOD values
    stop_step: np.ndarray     # (V,) step a voxel froze at; -1 = ran to the end
    mnn_history: np.ndarray   # (S+1, V); row s holds MNN-Dist_s, NaN unset
    lambda_idx: np.ndarray    # (S+1, V) chosen grid index per solve; -1 unset
    rule_fired: np.ndarray    # (S+1, V) penalty rule fired per solve
    n_solves: int
    n_nonconverged: int


class _FodState:
    """Normalized dense FODs with their square roots and zero flags."""

    def __init__(self, cc: np.ndarray, beta: np.ndarray):
        dense = (cc @ beta).T                      # (V, G)
        clamped = np.maximum(dense, 0.0)
        norms = np.linalg.norm(clamped, axis=1)
        self.zero = norms == 0.0
        safe = np.where(self.zero, 1.0, norms)
        self.unit = clamped / safe[:, None]
        self.sqrt = np.sqrt(self.unit)
        self.dense = dense


def _pair_distances(state: _FodState, idx: np.ndarray, valid: np.ndarray,
                    similarity: str) -> np.ndarray:
    """Distance from each voxel to its neighbor at one offset (NaN invalid)."""
    out = np.full(state.unit.shape[0], np.nan)
    vi = np.flatnonzero(valid)
    ni = idx[vi]
    if similarity == "hellinger":
        dots = np.einsum("ij,ij->i", state.sqrt[vi], state.sqrt[ni])
        d = np.sqrt(np.maximum(1.0 - dots, 0.0))
        top = 1.0
    else:
        dots = np.einsum("ij,ij->i", state.unit[vi], state.unit[ni])
        d = np.sqrt(np.maximum(2.0 - 2.0 * dots, 0.0))
        top = math.sqrt(2.0)
    zv, zn = state.zero[vi], state.zero[ni]
    d = np.where(zv ^ zn, top, d)
    d = np.where(zv & zn, 0.0, d)
    out[vi] = d
    return out


def run_smoother(signals: np.ndarray, mats: ProblemMatrices, grid: VoxelGrid,
                 schedule: NeighborhoodSchedule, wcfg: WeightConfig,
                 lam_grid: LambdaGrid, solver_cfg: SolverConfig) -> SmootherResult:
    """Full adaptive smoothing pass over a signal volume.

    signals has one row per voxel (grid order); mats.cc doubles as the dense
    evaluation matrix for distances.  Weighted averages always combine raw
    measurement rows, and frozen voxels keep contributing their frozen FODs
    and raw signals to their neighbors.
    """
    y = np.asarray(signals, dtype=np.float64)
    n_vox = grid.n_voxels
    if y.shape[0] != n_vox:
        raise ValidationError("one signal row per grid voxel required")
    inroi = grid.mask
    th = lam_grid.threshold
    steps = schedule.steps

    mnn_history = np.full((steps + 1, n_vox), np.nan)
    lambda_idx = np.full((steps + 1, n_vox), -1, dtype=np.int64)
    rule_fired = np.zeros((steps + 1, n_vox), dtype=bool)
    stop_step = np.full(n_vox, -1, dtype=np.int64)
    n_solves = 0
    n_nonconv = 0

    # step 0: plain voxel-wise fit
    roi_ids = np.flatnonzero(inroi)
    fit0 = fit_lambda_path(mats, y[roi_ids].T, lam_grid, solver_cfg, (th,))
    beta = np.zeros((mats.n_coef, n_vox))
    beta[:, roi_ids] = fit0.beta[th]
    lambda_idx[0, roi_ids] = fit0.kstar[th]
    rule_fired[0, roi_ids] = fit0.fired[th]
    sel = fit0.converged[fit0.kstar[th], np.arange(len(roi_ids))]
    n_nonconv += int((~sel).sum())
    n_solves += len(roi_ids)
    lam0_idx = lambda_idx[0].copy()

    state = _FodState(mats.cc, beta)
    active = inroi.copy()
    exempt = np.zeros(n_vox, dtype=bool)
    unit_offs = grid.unit_offsets()
    unit_maps = [grid.neighbor_index(o) for o in unit_offs]
    has_nbr = np.any([v for v, _ in unit_maps], axis=0)
    exempt[inroi & ~has_nbr] = True

    beta_prev1 = beta.copy()   # estimate from two steps back, once s >= 2

    for s in range(1, steps + 1):
        d_s = schedule.radius(s)
        offs = grid.offsets_within(d_s)
        maps = [grid.neighbor_index(o) for o in offs]
        dists = np.stack([
            _pair_distances(state, idx, valid & inroi, wcfg.similarity)
            for valid, idx in maps
        ])                                       # (n_offs, V), NaN if absent

        unit_rows = [k for k, o in enumerate(offs)
                     if np.linalg.norm(o) == 1.0]
        unit_d = np.where(np.isnan(dists[unit_rows]), np.inf, dists[unit_rows])
        mnn = unit_d.min(axis=0)                  # inf when no in-ROI neighbor
        mnn[~inroi] = np.nan
        mnn[exempt] = np.inf
        mnn_history[s][inroi] = mnn[inroi]

        entering = beta.copy()

        if wcfg.stopping == "mnn" and s >= 3:
            prev1 = mnn_history[s - 1]
            prev2 = mnn_history[s - 2]
            fire = (active & ~exempt
                    & (np.fmin(mnn, prev1) >= prev2))
            if np.any(fire):
                beta[:, fire] = beta_prev1[:, fire]
                stop_step[fire] = s
                active[fire] = False
                state = _FodState(mats.cc, beta)

        scaled = dists
        if wcfg.rescale:
            pool = mnn[inroi & ~exempt]
            pool = pool[np.isfinite(pool)]
            if pool.size:
                p_lo = float(np.percentile(pool, 100.0 * wcfg.alpha))
                p_hi = float(np.percentile(pool, 100.0 * (1.0 - wcfg.alpha)))
                factors = rescale_factors(mnn, p_lo, p_hi)
                scaled = dists * factors[None, :]

        act = np.flatnonzero(active)
        if act.size == 0:
            beta_prev1 = entering
            continue

        # weighted average of raw signals over the neighborhood
        loc = location_kernel(np.linalg.norm(offs, axis=1) / d_s)
        num = np.ones(n_vox)                      # self: K_loc(0) K_sim(0) = 1
        ybar = y.copy()
        for k, (valid, idx) in enumerate(maps):
            w = np.where(np.isnan(scaled[k]), 0.0,
                         loc[k] * similarity_kernel(
                             np.nan_to_num(scaled[k]), wcfg.gamma))
            w = np.where(valid & inroi, w, 0.0)
            num += w
            ybar += w[:, None] * y[idx]
        ybar /= num[:, None]

        if wcfg.lambda_mode == "path":
            fit = fit_lambda_path(mats, ybar[act].T, lam_grid, solver_cfg, (th,))
            new_beta = fit.beta[th]
            lambda_idx[s, act] = fit.kstar[th]
            rule_fired[s, act] = fit.fired[th]
            conv = fit.converged[fit.kstar[th], np.arange(len(act))]
        else:
            lams = lam_grid.values()[lam0_idx[act]]
            rho = float(np.exp(np.mean(np.log(np.maximum(lams, 1e-12)))))
            st = admm_batch(mats, ybar[act].T, lams,
                            max(rho, solver_cfg.rho_floor), solver_cfg)
            new_beta = st.gamma
            lambda_idx[s, act] = lam0_idx[act]
            conv = st.converged
        n_solves += len(act)

        bad = ~conv
        if np.any(bad):
            # freeze non-converged voxels at their last good estimate
            n_nonconv += int(bad.sum())
            frozen = act[bad]
            new_beta[:, bad] = entering[:, frozen]
            stop_step[frozen] = s
            active[frozen] = False

        beta[:, act] = new_beta
        new_state = _FodState(mats.cc, beta)

        if wcfg.stopping == "chi2":
            prev_state = state
            keep = act[conv] if np.any(bad) else act
            dist_consec = np.sqrt(np.maximum(np.einsum(
                "ij,ij->i",
                new_state.unit[keep] - prev_state.unit[keep],
                new_state.unit[keep] - prev_state.unit[keep]), 0.0))
            threshold = chi2_stop_threshold(s, wcfg.chi2_scale)
            rej = dist_consec > threshold
            if np.any(rej):
                frozen = keep[rej]
                beta[:, frozen] = entering[:, frozen]
                stop_step[frozen] = s
                active[frozen] = False
                new_state = _FodState(mats.cc, beta)

        state = new_state
        beta_prev1 = entering

    return SmootherResult(
        beta=beta.T.copy(), dense=state.dense, stop_step=stop_step,
        mnn_history=mnn_history, lambda_idx=lambda_idx,
        rule_fired=rule_fired, n_solves=n_solves, n_nonconverged=n_nonconv,
    )
