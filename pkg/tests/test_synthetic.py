import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import i0e

from fodkit.errors import ConfigurationError, ValidationError
from fodkit.harmonics import ShBasisSpec, eval_sh_matrix
from fodkit.icosphere import build_icosphere, folded_angles
from fodkit.signal_model import ResponseFunction
from fodkit.synthetic import (
    NoiseSpec,
    ROI_2D_I,
    ROI_2D_II,
    ROI_3D,
    RoiSpec,
    RoiTruth,
    add_rician_noise,
    make_roi,
    noiseless_signal,
    roi_spec,
    true_fod_sh,
)


def single_fiber_truth(direction):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return RoiTruth(
        (1, 1, 1), np.array([1]), d[None, None, :].repeat(2, axis=1) * [[[1], [0]]],
        np.array([[1.0, 0.0]]), np.array([[0, -1]]),
    )


def isotropic_truth():
    return RoiTruth((1, 1, 1), np.array([0]), np.zeros((1, 2, 3)),
                    np.zeros((1, 2)), np.full((1, 2), -1))


@pytest.mark.parametrize("spec,expected", [
    (ROI_2D_I, (0, 72, 28)),
    (ROI_2D_II, (22, 66, 12)),
    (ROI_3D, (52, 163, 285)),
])
def test_published_voxel_counts(spec, expected):
    truth = make_roi(spec)
    assert truth.counts() == expected
    assert truth.n_voxels == int(np.prod(spec.dims))


def test_bad_geometry_reports_counts():
    bad = RoiSpec("bad", ROI_2D_I.dims, ROI_2D_I.bundles, (1, 2, 3))
    with pytest.raises(ConfigurationError, match="produced voxel counts"):
        make_roi(bad)
    with pytest.raises(ConfigurationError, match="unknown ROI"):
        roi_spec("nope")


@pytest.mark.parametrize("spec", [ROI_2D_I, ROI_2D_II, ROI_3D])
def test_within_bundle_neighbor_smoothness(spec):
    truth = make_roi(spec)
    dims = truth.dims
    idx = np.arange(truth.n_voxels).reshape(dims)
    offsets = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    worst = 0.0
    for off in offsets:
        if dims[np.argmax(off)] == 1:
            continue
        sa = tuple(slice(0, -o) if o else slice(None) for o in off)
        sb = tuple(slice(o, None) if o else slice(None) for o in off)
        for va, vb in zip(idx[sa].ravel(), idx[sb].ravel()):
            for s in range(2):
                b = truth.bundle_ids[va, s]
                if b < 0:
                    continue
                other = np.flatnonzero(truth.bundle_ids[vb] == b)
                if other.size:
                    ang = folded_angles(truth.directions[va, s],
                                        truth.directions[vb, other[0]])
                    worst = max(worst, np.degrees(float(ang)))
    assert worst <= 15.0


def test_noiseless_single_fiber_values():
    rf = ResponseFunction(bval=1000.0, lambda_perp=1e-3, lambda_par=1e-2)
    truth = single_fiber_truth([0.0, 0.0, 1.0])
    grads = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    s = noiseless_signal(truth, rf, grads)[0]
    assert s[0] == pytest.approx(math.exp(-10.0), rel=1e-12)
    assert s[1] == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_noiseless_isotropic_constant():
    rf = ResponseFunction(bval=1000.0, lambda_perp=1e-3, lambda_par=1e-2)
    grid = build_icosphere(1, hemisphere=True)
    s = noiseless_signal(isotropic_truth(), rf, grid.points)[0]
    assert np.allclose(s, math.exp(-1.0), rtol=1e-13)


def test_noiseless_signals_antipodally_symmetric():
    rf = ResponseFunction()
    truth = single_fiber_truth([0.3, -0.5, 0.81])
    u = np.array([[0.6, 0.64, 0.48]])
    assert noiseless_signal(truth, rf, u) == pytest.approx(
        noiseless_signal(truth, rf, -u))


def test_true_fod_isotropic_pure_l0():
    f = true_fod_sh(isotropic_truth(), l_max=8)[0]
    assert f[0] == pytest.approx(1.0 / math.sqrt(4 * math.pi))
    assert np.abs(f[1:]).max() == 0.0


def test_true_fod_single_dirac_sifting():
    d = np.array([0.3, -0.5, 0.81])
    d /= np.linalg.norm(d)
    truth = single_fiber_truth(d)
    f = true_fod_sh(truth, l_max=8)[0]
    assert np.allclose(f, eval_sh_matrix(d[None], ShBasisSpec(8))[0], atol=1e-14)


def test_true_fod_two_diracs_peaks_near_truth():
    # dense-grid argmax oracle: projected crossing FOD peaks near both dirs
    d1 = np.array([1.0, 0.0, 0.0])
    d2 = np.array([0.0, 1.0, 0.0])
    truth = RoiTruth((1, 1, 1), np.array([2]),
                     np.stack([d1, d2])[None], np.array([[0.5, 0.5]]),
                     np.array([[0, 1]]))
    f = true_fod_sh(truth, l_max=8)[0]
    grid = build_icosphere(3, hemisphere=True)
    dense = eval_sh_matrix(grid.points, ShBasisSpec(8)) @ f
    top = grid.points[np.argmax(dense)]
    near1 = np.degrees(folded_angles(top, d1))
    near2 = np.degrees(folded_angles(top, d2))
    assert min(near1, near2) <= 5.0
    for d in (d1, d2):
        cone = np.degrees(folded_angles(grid.points, d[None])) <= 5.0
        assert dense[cone].max() >= 0.9 * dense.max()


def test_rician_noiseless_limit():
    s = np.linspace(0.1, 1.0, 8)[None]
    noisy = add_rician_noise(s, NoiseSpec(sigma=1e-12, seed=0))
    assert np.allclose(noisy, s, atol=1e-10)


def test_rician_rayleigh_mean_at_zero_signal():
    sigma = 0.05
    noisy = add_rician_noise(np.zeros((1, 1_000_000)), NoiseSpec(sigma, seed=3))
    expected = sigma * math.sqrt(math.pi / 2.0)
    assert noisy.mean() == pytest.approx(expected, rel=5e-3)


def test_rician_mean_matches_rice_distribution():
    # numerical-integration oracle for the Rice mean at S=1, sigma=0.05
    nu, sigma = 1.0, 0.05
    def integrand(x):
        z = x * nu / sigma**2
        return x * (x / sigma**2) * math.exp(-((x - nu) ** 2) / (2 * sigma**2)) * i0e(z)
    mean_oracle = quad(integrand, max(0.0, nu - 10 * sigma), nu + 10 * sigma)[0]
    noisy = add_rician_noise(np.full((1, 1_000_000), nu), NoiseSpec(sigma, seed=4))
    assert noisy.mean() == pytest.approx(mean_oracle, rel=5e-3)


def test_noise_seed_reproducibility_and_decorrelation():
    s = np.full((3, 64), 0.5)
    a = add_rician_noise(s, NoiseSpec(0.05, seed=11))
    b = add_rician_noise(s, NoiseSpec(0.05, seed=11))
    c = add_rician_noise(s, NoiseSpec(0.05, seed=12))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    # different voxels use decorrelated streams
    r = np.corrcoef(a[0], a[1])[0, 1]
    assert abs(r) < 0.3
    assert not np.array_equal(a[0], a[1])


def test_noise_spec_validation():
    with pytest.raises(ValidationError):
        NoiseSpec(sigma=0.0, seed=1)
