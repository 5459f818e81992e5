"""Single-tensor scalar maps: fractional anisotropy and mean diffusivity."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def fa(eigenvalues: np.ndarray) -> np.ndarray:
    """Fractional anisotropy of eigenvalue triples (..., 3); 0 where undefined."""
    ev = np.asarray(eigenvalues, dtype=np.float64)
    if ev.shape[-1] != 3:
        raise ValidationError("expected eigenvalue triples")
    l1, l2, l3 = ev[..., 0], ev[..., 1], ev[..., 2]
    num = np.sqrt((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l3 - l1) ** 2)
    den = np.sqrt(2.0 * (l1**2 + l2**2 + l3**2))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / den, 0.0)
    return out


def md(eigenvalues: np.ndarray) -> np.ndarray:
    """Mean diffusivity of eigenvalue triples (..., 3)."""
    ev = np.asarray(eigenvalues, dtype=np.float64)
    if ev.shape[-1] != 3:
        raise ValidationError("expected eigenvalue triples")
    return ev.mean(axis=-1)


def fa_defined(eigenvalues: np.ndarray) -> np.ndarray:
    """False where all three eigenvalues vanish (FA reported as 0 there)."""
    ev = np.asarray(eigenvalues, dtype=np.float64)
    return np.any(ev != 0.0, axis=-1)


def fit_single_tensor(signals: np.ndarray, bvals: np.ndarray,
                      directions: np.ndarray):
    """Log-linear least-squares tensor fit, for background maps only.

    Returns (eigenvalues (V, 3) descending, principal directions (V, 3)).
    """
    s = np.maximum(np.atleast_2d(np.asarray(signals, dtype=np.float64)), 1e-12)
    b = np.asarray(bvals, dtype=np.float64)
    u = np.asarray(directions, dtype=np.float64)
    if u.shape[0] != s.shape[1] or b.shape[0] != s.shape[1]:
        raise ValidationError("signals, b-values and directions must align")
    design = np.column_stack([
        np.ones_like(b),
        -b * u[:, 0] ** 2, -b * u[:, 1] ** 2, -b * u[:, 2] ** 2,
        -2 * b * u[:, 0] * u[:, 1], -2 * b * u[:, 0] * u[:, 2],
        -2 * b * u[:, 1] * u[:, 2],
    ])
    coef, *_ = np.linalg.lstsq(design, np.log(s).T, rcond=None)
    n_vox = s.shape[0]
    evals = np.empty((n_vox, 3))
    pdirs = np.empty((n_vox, 3))
    for v in range(n_vox):
        dxx, dyy, dzz, dxy, dxz, dyz = coef[1:, v]
        tensor = np.array([[dxx, dxy, dxz], [dxy, dyy, dyz], [dxz, dyz, dzz]])
        w, vec = np.linalg.eigh(tensor)
        order = np.argsort(w)[::-1]
        evals[v] = w[order]
        pdirs[v] = vec[:, order[0]]
    return evals, pdirs
