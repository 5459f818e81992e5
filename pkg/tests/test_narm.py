import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fodkit.admm import LambdaGrid, ProblemMatrices, SolverConfig, fit_lambda_path
from fodkit.errors import ValidationError
from fodkit.harmonics import ShBasisSpec, eval_sh_matrix
from fodkit.icosphere import build_icosphere
from fodkit.narm import (
    NeighborhoodSchedule,
    VoxelGrid,
    WeightConfig,
    chi2_stop_threshold,
    default_schedule,
    hellinger_distance,
    mnn_distance,
    neighborhood_weights,
    pmarm_stopping_check,
    rescale_factors,
    run_smoother,
    stopping_check,
    variant_config,
)
from fodkit.needlets import build_needlet_frame
from fodkit.signal_model import ResponseFunction, build_design
from fodkit.synthetic import (
    NoiseSpec,
    ROI_2D_I,
    add_rician_noise,
    make_roi,
    noiseless_signal,
    true_fod_sh,
)

RNG = np.random.default_rng(0)


# -- distance -----------------------------------------------------------------

def test_hellinger_identity_and_disjoint():
    f = RNG.random(12)
    assert hellinger_distance(f, f) == pytest.approx(0.0, abs=1e-14)
    a = np.zeros(8); a[0] = 1.0
    b = np.zeros(8); b[1] = 1.0
    assert hellinger_distance(a, b) == pytest.approx(1.0, abs=1e-14)


def test_hellinger_zero_norm_conventions():
    z = np.zeros(5)
    f = np.ones(5)
    assert hellinger_distance(z, f) == 1.0
    assert hellinger_distance(z, z) == 0.0


def test_hellinger_matches_high_precision_recompute():
    # straight-line recomputation oracle in extended precision
    spec = ShBasisSpec(8)
    grid = build_icosphere(3, hemisphere=True)
    phi = eval_sh_matrix(grid.points, spec)
    d1 = np.array([1.0, 0.0, 0.0])
    d2 = np.array([0.0, 1.0, 0.0])
    f_cross = phi @ (0.5 * eval_sh_matrix(d1[None], spec)[0]
                     + 0.5 * eval_sh_matrix(d2[None], spec)[0])
    f_single = phi @ eval_sh_matrix(d1[None], spec)[0]

    def oracle(f, g):
        f = np.maximum(f.astype(np.longdouble), 0)
        g = np.maximum(g.astype(np.longdouble), 0)
        f = f / np.sqrt((f * f).sum())
        g = g / np.sqrt((g * g).sum())
        return float(np.sqrt(((np.sqrt(f) - np.sqrt(g)) ** 2).sum() / 2))

    for a, b in ((f_cross, f_single), (f_cross, f_cross), (f_single, -f_single)):
        assert hellinger_distance(a, b) == pytest.approx(oracle(a, b), abs=1e-12)
    assert hellinger_distance(f_cross, f_single) > 0.1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hellinger_range(seed):
    r = np.random.default_rng(seed)
    f, g = r.random(16), r.random(16)
    d = hellinger_distance(f, g)
    assert 0.0 <= d <= 1.0


# -- weights ------------------------------------------------------------------

def test_weights_single_member():
    w = neighborhood_weights(np.zeros((1, 3)), np.zeros(1), d_s=0.5, gamma=2.0)
    assert w == pytest.approx([1.0])


def test_weights_symmetry():
    rel = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0]], dtype=float)
    w = neighborhood_weights(rel, np.array([0.0, 0.3, 0.3]), d_s=2.0, gamma=2.0)
    assert w[1] == pytest.approx(w[2], rel=1e-15)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_weights_match_spreadsheet_recompute():
    # 3x3 patch, gamma = 2, hand-specified distances
    rel = np.array([[dx, dy, 0] for dx in (-1, 0, 1) for dy in (-1, 0, 1)],
                   dtype=float)
    dist = np.array([0.5, 0.2, 0.4, 0.1, 0.0, 0.3, 0.6, 0.25, 0.45])
    d_s = 1.7
    w = neighborhood_weights(rel, dist, d_s, gamma=2.0)
    raw = []
    for k in range(9):
        u = math.sqrt(rel[k, 0] ** 2 + rel[k, 1] ** 2) / d_s
        loc = max(1 - u * u, 0.0)
        raw.append(loc * math.exp(-2.0 * dist[k] ** 2))
    expected = np.array(raw) / sum(raw)
    assert np.allclose(w, expected, atol=1e-12)


def test_weights_huge_gamma_kills_far_neighbors():
    # exp(-gamma d^2) <= 1e-8 needs d >= sqrt(ln(1e8)/gamma) ~= 4.3e-3 at 1e6
    rel = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    w = neighborhood_weights(rel, np.array([0.0, 4.3e-3]), 2.0, gamma=1e6)
    assert w[1] < 1e-8
    assert w[0] > 1.0 - 1e-7


# -- MNN, rescaling, stopping ------------------------------------------------

def test_mnn_examples():
    assert mnn_distance(np.array([0.3, 0.1, 0.2])) == pytest.approx(0.1)
    assert mnn_distance(np.zeros(4)) == 0.0
    assert mnn_distance(np.array([])) == math.inf


def test_mnn_lower_inside_bundles_than_at_boundaries():
    # noiseless truth-field oracle on the first 2D region
    truth = make_roi(ROI_2D_I)
    spec = ShBasisSpec(8)
    grid = build_icosphere(3, hemisphere=True)
    phi = eval_sh_matrix(grid.points, spec)
    dense = true_fod_sh(truth, 8) @ phi.T
    vg = VoxelGrid(truth.dims)
    unit = [vg.neighbor_index(o) for o in vg.unit_offsets()]
    mnn = np.full(truth.n_voxels, np.inf)
    same_class = np.ones(truth.n_voxels, dtype=bool)
    for valid, idx in unit:
        for v in np.flatnonzero(valid):
            mnn[v] = min(mnn[v], hellinger_distance(dense[v], dense[idx[v]]))
            same_class[v] &= truth.n_fibers[v] == truth.n_fibers[idx[v]]
    single = truth.n_fibers == 1
    interior = single & same_class
    boundary = single & ~same_class
    assert mnn[interior].mean() < mnn[boundary].mean()


def test_rescale_noop_inside_band():
    f = rescale_factors(np.array([0.2, 0.3]), 0.1, 0.5)
    assert np.allclose(f, 1.0)


def test_rescale_halves_when_double_upper():
    f = rescale_factors(np.array([1.0]), 0.1, 0.5)
    assert f[0] == pytest.approx(0.5)


def test_rescale_zero_and_isolated_untouched():
    f = rescale_factors(np.array([0.0, math.inf]), 0.1, 0.5)
    assert np.allclose(f, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rescaled_mnn_confined_to_band(seed):
    r = np.random.default_rng(seed)
    mnn = r.random(50) + 1e-6
    lo, hi = np.percentile(mnn, 15), np.percentile(mnn, 85)
    scaled = mnn * rescale_factors(mnn, lo, hi)
    assert np.all(scaled >= lo - 1e-12) and np.all(scaled <= hi + 1e-12)


def test_stopping_rule_examples():
    assert stopping_check(0.4, 0.45, 0.44) is True
    assert stopping_check(0.4, 0.35, 0.30) is False
    assert stopping_check(0.4, 0.5, 0.39) is False


def test_chi2_threshold_oracle():
    # bisection oracle on erfc for the upper 0.6 chi2(1) point
    from math import erfc, sqrt
    lo, hi = 0.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if erfc(sqrt(mid / 2.0)) > 0.6:
            lo = mid
        else:
            hi = mid
    assert chi2_stop_threshold(1, 0.1) == pytest.approx(0.1 * lo, abs=1e-10)
    assert chi2_stop_threshold(1, 0.1) == pytest.approx(0.02750, abs=2e-5)
    assert pmarm_stopping_check(0.03, 1, 0.1) is True
    assert pmarm_stopping_check(0.02, 1, 0.1) is False
    # thresholds grow with the step index
    ts = [chi2_stop_threshold(s, 1.0) for s in (1, 2, 4, 8)]
    assert all(a < b for a, b in zip(ts, ts[1:]))


def test_config_validation():
    with pytest.raises(ValidationError):
        WeightConfig(alpha=0.6)
    with pytest.raises(ValidationError):
        WeightConfig(stopping="chi2")
    with pytest.raises(ValidationError):
        NeighborhoodSchedule(growth=0.9, steps=3)
    with pytest.raises(ValidationError):
        variant_config("bogus")
    assert default_schedule((10, 10, 1)).steps == 10
    assert default_schedule((10, 10, 5)).steps == 6
    assert variant_config("pmarm", c=0.1).gamma == 20.0


# -- end-to-end smoother -------------------------------------------------------

@pytest.fixture(scope="module")
def small_setting():
    spec = ShBasisSpec(4)
    _, c = build_needlet_frame(4)
    grads = build_icosphere(1, hemisphere=True).points
    dense = build_icosphere(2, hemisphere=True)
    phi_dense = eval_sh_matrix(dense.points, spec)
    rf = ResponseFunction()
    design = build_design(eval_sh_matrix(grads, spec), rf, c)
    mats = ProblemMatrices(design, phi_dense @ c)
    lam_grid = LambdaGrid(count=30, log10_lo=-4.0, window=3, threshold=1e-3)
    cfg = SolverConfig(max_iters=2000)
    return mats, grads, rf, lam_grid, cfg


def noisy_field(grads, rf, dims, seed):
    rng = np.random.default_rng(seed)
    n_vox = int(np.prod(dims))
    y = np.empty((n_vox, grads.shape[0]))
    for v in range(n_vox):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        y[v] = rf.kernel(grads @ d)
    return add_rician_noise(y, NoiseSpec(0.05, seed))


def test_smoother_zero_steps_is_voxelwise(small_setting):
    mats, grads, rf, lam_grid, cfg = small_setting
    y = noisy_field(grads, rf, (3, 3, 1), seed=1)
    grid = VoxelGrid((3, 3, 1))
    res = run_smoother(y, mats, grid, NeighborhoodSchedule(1.15, 0),
                       variant_config("narm"), lam_grid, cfg)
    fit = fit_lambda_path(mats, y.T, lam_grid, cfg, (lam_grid.threshold,))
    assert np.array_equal(res.beta, fit.beta[lam_grid.threshold].T)


def test_smoother_uniform_field_stays_uniform(small_setting):
    mats, grads, rf, lam_grid, cfg = small_setting
    s = rf.kernel(grads @ np.array([0.0, 0.0, 1.0]))
    y = np.tile(s, (9, 1))
    grid = VoxelGrid((3, 3, 1))
    res = run_smoother(y, mats, grid, NeighborhoodSchedule(1.15, 3),
                       variant_config("narm"), lam_grid, cfg)
    assert np.allclose(res.beta, res.beta[0][None, :], atol=1e-12)


def test_smoother_determinism(small_setting):
    mats, grads, rf, lam_grid, cfg = small_setting
    y = noisy_field(grads, rf, (3, 3, 1), seed=2)
    grid = VoxelGrid((3, 3, 1))
    args = (y, mats, grid, NeighborhoodSchedule(1.15, 3),
            variant_config("narm"), lam_grid, cfg)
    a = run_smoother(*args)
    b = run_smoother(*args)
    assert np.array_equal(a.beta, b.beta)
    assert np.array_equal(a.stop_step, b.stop_step)


def test_smoother_frozen_voxels_bitwise_stable(small_setting):
    mats, grads, rf, lam_grid, cfg = small_setting
    y = noisy_field(grads, rf, (4, 4, 1), seed=3)
    grid = VoxelGrid((4, 4, 1))
    short = run_smoother(y, mats, grid, NeighborhoodSchedule(1.15, 5),
                         variant_config("narm"), lam_grid, cfg)
    longer = run_smoother(y, mats, grid, NeighborhoodSchedule(1.15, 7),
                          variant_config("narm"), lam_grid, cfg)
    frozen = (short.stop_step >= 0) & (short.stop_step <= 5)
    assert frozen.any()
    assert np.array_equal(short.beta[frozen], longer.beta[frozen])
    assert np.array_equal(short.stop_step[frozen], longer.stop_step[frozen])


def test_pmarm_limits(small_setting):
    mats, grads, rf, lam_grid, cfg = small_setting
    y = noisy_field(grads, rf, (3, 3, 1), seed=4)
    grid = VoxelGrid((3, 3, 1))
    sched = NeighborhoodSchedule(1.15, 3)
    never = run_smoother(y, mats, grid, sched,
                         variant_config("pmarm", c=1e12), lam_grid, cfg)
    assert np.all(never.stop_step == -1)
    always = run_smoother(y, mats, grid, sched,
                          variant_config("pmarm", c=1e-30), lam_grid, cfg)
    fit = fit_lambda_path(mats, y.T, lam_grid, cfg, (lam_grid.threshold,))
    voxelwise = fit.beta[lam_grid.threshold].T
    # any representable change fires the rule at once and rolls back to the
    # previous (still voxel-wise) estimate, so the output degenerates fully
    assert np.array_equal(always.beta, voxelwise)
    assert np.any(always.stop_step == 1)


def test_isolated_voxels_stay_voxelwise(small_setting):
    mats, grads, rf, lam_grid, cfg = small_setting
    y = noisy_field(grads, rf, (3, 1, 1), seed=5)
    mask = np.array([True, False, True])  # ends are isolated
    grid = VoxelGrid((3, 1, 1), mask)
    res = run_smoother(y, mats, grid, NeighborhoodSchedule(1.15, 4),
                       variant_config("narm"), lam_grid, cfg)
    fit = fit_lambda_path(mats, y[[0, 2]].T, lam_grid, cfg, (lam_grid.threshold,))
    assert np.allclose(res.beta[[0, 2]], fit.beta[lam_grid.threshold].T,
                       atol=1e-12)
    assert np.all(res.stop_step[[0, 2]] == -1)


def test_voxel_grid_offsets():
    g2 = VoxelGrid((5, 5, 1))
    assert len(g2.unit_offsets()) == 4
    g3 = VoxelGrid((5, 5, 5))
    assert len(g3.unit_offsets()) == 6
    offs = g3.offsets_within(2.0)
    norms = np.linalg.norm(offs, axis=1)
    assert norms.max() <= 2.0 and norms.min() > 0
