"""Nonnegativity-constrained lasso via ADMM, with RSS-based penalty selection.

Solves, per voxel,

    minimize 0.5 ||y - X beta||^2 + lam ||beta||_1   s.t.  Cc beta >= 0

by splitting beta into a sparse copy gamma (soft-thresholded) and a
constraint copy eta (projected onto the nonnegative orthant), with
over-relaxation and the standard primal/dual stopping criterion.  The
returned estimate is gamma, which is exactly sparse.

All voxels of a volume share X and Cc, so the solver runs batched: one
Cholesky factorization per (rho), matrix-matrix products across the voxel
axis, and per-voxel freezing at each voxel's own stopping iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ValidationError

RSS_FLOOR = 1e-300


def soft_threshold(v: np.ndarray, kappa) -> np.ndarray:
    """Elementwise (|v| - kappa)_+ sign(v); kappa scalar or broadcastable."""
    if np.any(np.asarray(kappa) < 0):
        raise ValidationError("soft threshold requires kappa >= 0")
    v = np.asarray(v)
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


@dataclass(frozen=True)
class SolverConfig:
    """Solver tolerances.

    The defaults sit at the tight end of the usual practical ranges because
    the RSS-flattening penalty selection compares successive log-RSS values
    at the 1e-3 level; a 1e-2 relative solve leaves too much jitter in that
    path for the rule to ever fire.
    """

    eps_abs: float = 1e-5
    eps_rel: float = 1e-3
    relax: float = 1.5
    max_iters: int = 5000
    rho_floor: float = 1e-6
    fixed_rho: float | None = None  # share one factorization across a path
    check_every: int = 4            # stopping-test cadence, in iterations

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValidationError("tolerances must be positive")
        if not (1.0 <= self.relax < 2.0):
            raise ValidationError("relaxation must lie in [1, 2)")
        if self.check_every < 1:
            raise ValidationError("check_every must be >= 1")


@dataclass
class ProblemMatrices:
    """Design and constraint matrices with their cached Gram products."""

    x: np.ndarray         # (n, p)
    cc: np.ndarray        # (l, p)
    xtx: np.ndarray = field(init=False)
    ctc: np.ndarray = field(init=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.cc = np.asarray(self.cc, dtype=np.float64)
        if self.x.shape[1] != self.cc.shape[1]:
            raise ValidationError(
                f"design has {self.x.shape[1]} columns, constraint "
                f"{self.cc.shape[1]}"
            )
        self.xtx = self.x.T @ self.x
        self.ctc = self.cc.T @ self.cc

    @property
    def n_coef(self) -> int:
        return self.x.shape[1]


@dataclass
class AdmmState:
    """Warm-startable per-voxel iterates; duals are in scaled form."""

    gamma: np.ndarray      # (p, V)
    eta: np.ndarray        # (l, V)
    u: np.ndarray          # (p, V)
    t: np.ndarray          # (l, V)
    rho: float
    iterations: np.ndarray  # (V,)
    converged: np.ndarray   # (V,) bool

    @classmethod
    def cold(cls, p: int, l: int, n_vox: int, rho: float) -> "AdmmState":
        return cls(
            gamma=np.zeros((p, n_vox)), eta=np.zeros((l, n_vox)),
            u=np.zeros((p, n_vox)), t=np.zeros((l, n_vox)),
            rho=rho, iterations=np.zeros(n_vox, dtype=np.int64),
            converged=np.zeros(n_vox, dtype=bool),
        )

    def rescaled(self, rho: float) -> "AdmmState":
        """Carry the unscaled duals over to a new penalty parameter."""
        if rho == self.rho:
            return self
        f = self.rho / rho
        return AdmmState(self.gamma, self.eta, f * self.u, f * self.t, rho,
                         self.iterations, self.converged)


def admm_batch(mats: ProblemMatrices, y: np.ndarray, lam, rho: float,
               cfg: SolverConfig, warm: AdmmState | None = None) -> AdmmState:
    """Run ADMM on a batch of problems sharing (X, Cc, lam, rho).

    y has shape (n, V); lam is a scalar or per-voxel vector. Each voxel stops
    at its own primal/dual criterion and its iterates freeze there.
    """
    x, cc = mats.x, mats.cc
    n, p = x.shape
    l = cc.shape[0]
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n_vox = y.shape[1]
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n_vox,))

    base = AdmmState.cold(p, l, n_vox, rho) if warm is None else warm.rescaled(rho)
    state = AdmmState(base.gamma.copy(), base.eta.copy(), base.u.copy(),
                      base.t.copy(), rho, base.iterations.copy(),
                      base.converged.copy())
    factor = cho_factor(mats.xtx + rho * (np.eye(p) + mats.ctc))
    xty = x.T @ y

    # work copies restricted to still-active voxels
    ids = np.arange(n_vox)
    gam = state.gamma.copy()
    eta = state.eta.copy()
    u = state.u.copy()
    t = state.t.copy()
    kappa = lam / rho
    alpha = cfg.relax
    sq_pl, sq_p = np.sqrt(p + l), np.sqrt(p)

    iterations = np.full(n_vox, cfg.max_iters, dtype=np.int64)
    converged = np.zeros(n_vox, dtype=bool)

    ct_em_t = cc.T @ (eta - t)
    for it in range(1, cfg.max_iters + 1):
        rhs = xty[:, ids] + rho * (gam - u) + rho * ct_em_t
        beta = cho_solve(factor, rhs)
        cb = cc @ beta
        hb = alpha * beta + (1.0 - alpha) * gam
        hcb = alpha * cb + (1.0 - alpha) * eta
        gam_old, eta_old = gam, eta
        gam = soft_threshold(hb + u, kappa[ids])
        eta = np.maximum(0.0, hcb + t)
        u = u + hb - gam
        t = t + hcb - eta

        checking = it % cfg.check_every == 0 or it == cfg.max_iters
        if not checking:
            ct_em_t = cc.T @ (eta - t)
            continue
        packed = cc.T @ np.hstack((eta - t, eta - eta_old, t))
        k = ids.shape[0]
        ct_em_t, ct_deta, ct_t = packed[:, :k], packed[:, k:2 * k], packed[:, 2 * k:]

        r = np.sqrt(np.sum((beta - gam) ** 2, 0) + np.sum((cb - eta) ** 2, 0))
        d = rho * np.sqrt(np.sum((gam - gam_old + ct_deta) ** 2, 0))
        eps_pri = cfg.eps_abs * sq_pl + cfg.eps_rel * np.maximum(
            np.sqrt(np.sum(beta**2, 0) + np.sum(cb**2, 0)),
            np.sqrt(np.sum(gam**2, 0) + np.sum(eta**2, 0)),
        )
        eps_dual = cfg.eps_abs * sq_p + cfg.eps_rel * rho * np.sqrt(
            np.sum((u + ct_t) ** 2, 0)
        )
        done = (r <= eps_pri) & (d <= eps_dual)
        if np.any(done) or it == cfg.max_iters:
            finished = done if it < cfg.max_iters else np.ones_like(done)
            out = ids[finished]
            state.gamma[:, out] = gam[:, finished]
            state.eta[:, out] = eta[:, finished]
            state.u[:, out] = u[:, finished]
            state.t[:, out] = t[:, finished]
            iterations[out] = it
            converged[out] = done[finished]
            if np.all(finished):
                break
            keep = ~finished
            ids = ids[keep]
            gam, eta, u, t = (a[:, keep] for a in (gam, eta, u, t))
            ct_em_t = ct_em_t[:, keep]

    state.iterations = iterations
    state.converged = converged
    state.rho = rho
    return state


@dataclass(frozen=True)
class ConstrainedLassoProblem:
    """Single-voxel problem; rho defaults to max(lam, rho_floor)."""

    x: np.ndarray
    y: np.ndarray
    constraint: np.ndarray
    lam: float
    rho: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lam must be >= 0")
        if self.rho is not None and self.rho <= 0:
            raise ValidationError("rho must be > 0")


def solve_constrained_lasso(prob: ConstrainedLassoProblem, cfg: SolverConfig,
                            warm: AdmmState | None = None):
    """Solve one constrained lasso; returns (beta_hat, state, converged)."""
    rho = prob.rho if prob.rho is not None else max(prob.lam, cfg.rho_floor)
    mats = ProblemMatrices(prob.x, prob.constraint)
    state = admm_batch(mats, np.asarray(prob.y), prob.lam, rho, cfg, warm)
    return state.gamma[:, 0].copy(), state, bool(state.converged[0])


@dataclass(frozen=True)
class LambdaGrid:
    """Descending log-spaced penalty grid with the RSS flattening rule."""

    count: int = 100
    log10_hi: float = 0.0
    log10_lo: float = -5.0
    window: int = 5       # T consecutive relative changes
    threshold: float = 1e-3

    def __post_init__(self):
        if self.count <= self.window or self.window < 1:
            raise ValidationError("need count > window >= 1")
        if self.log10_hi <= self.log10_lo:
            raise ValidationError("grid must be descending")

    def values(self) -> np.ndarray:
        return np.logspace(self.log10_hi, self.log10_lo, self.count)


def select_lambda_indices(rss: np.ndarray, lambdas: np.ndarray, window: int,
                          threshold: float):
    """Apply the RSS flattening rule to a (K, V) RSS path.

    Returns (kstar, fired): 0-based chosen indices and whether the rule fired
    (otherwise the last grid point is returned, flagged).
    """
    rss = np.atleast_2d(np.asarray(rss, dtype=np.float64).T).T  # (K, V)
    big_k = rss.shape[0]
    if lambdas.shape[0] != big_k:
        raise ValidationError("RSS path and lambda grid lengths differ")
    log_rss = np.log(np.maximum(rss, RSS_FLOOR))
    dll = np.diff(np.log(lambdas))
    delta = np.abs(np.diff(log_rss, axis=0) / dll[:, None])  # row i = delta_{i+2}
    csum = np.cumsum(np.vstack((np.zeros((1, delta.shape[1])), delta)), axis=0)
    kstar = np.full(rss.shape[1], big_k - 1, dtype=np.int64)
    fired = np.zeros(rss.shape[1], dtype=bool)
    for k in range(window + 1, big_k + 1):  # 1-based k, rule eligible from T+1
        hi, lo = k - 1, k - 1 - window      # delta rows [lo, hi) end at delta_k
        mean = (csum[hi] - csum[lo]) / window
        hit = (~fired) & (mean < threshold)
        kstar[hit] = k - 1
        fired[hit] = True
        if np.all(fired):
            break
    return kstar, fired


@dataclass
class PathFit:
    """Sequential warm-started fit over a descending lambda grid."""

    lambdas: np.ndarray            # (K,)
    rss: np.ndarray                # (K, V), NaN after a voxel left the batch
    kstar: dict[float, np.ndarray]     # threshold -> (V,) chosen index
    fired: dict[float, np.ndarray]     # threshold -> (V,) rule fired
    beta: dict[float, np.ndarray]      # threshold -> (p, V) estimate at kstar
    iterations: np.ndarray         # (K, V) ADMM iterations per grid point
    converged: np.ndarray          # (K, V)

    def selected_lambda(self, threshold: float) -> np.ndarray:
        return self.lambdas[self.kstar[threshold]]


def fit_lambda_path(mats: ProblemMatrices, y: np.ndarray, grid: LambdaGrid,
                    cfg: SolverConfig, thresholds: tuple[float, ...] | None = None,
                    full_path: bool = False) -> PathFit:
    """Fit the full lambda path with warm starts and select per voxel.

    With multiple thresholds the same path serves every selection rule; a
    voxel leaves the batch once it has fired for all thresholds (unless
    full_path is set, for diagnostics).
    """
    if thresholds is None:
        thresholds = (grid.threshold,)
    lambdas = grid.values()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n_vox = y.shape[1]
    p = mats.n_coef
    big_k = grid.count
    t_win = grid.window

    rss = np.full((big_k, n_vox), np.nan)
    iterations = np.zeros((big_k, n_vox), dtype=np.int64)
    converged = np.zeros((big_k, n_vox), dtype=bool)
    kstar = {th: np.full(n_vox, big_k - 1, dtype=np.int64) for th in thresholds}
    fired = {th: np.zeros(n_vox, dtype=bool) for th in thresholds}
    beta = {th: np.zeros((p, n_vox)) for th in thresholds}

    ids = np.arange(n_vox)
    state: AdmmState | None = None
    log_lam = np.log(lambdas)
    # rolling window of the last T relative RSS changes, per active voxel
    delta_hist = np.zeros((t_win, n_vox))
    prev_log_rss = np.zeros(n_vox)

    for k in range(big_k):
        lam = lambdas[k]
        rho = cfg.fixed_rho if cfg.fixed_rho is not None else max(lam, cfg.rho_floor)
        state = admm_batch(mats, y[:, ids], lam, rho, cfg, state)
        resid = y[:, ids] - mats.x @ state.gamma
        rss_k = np.sum(resid**2, axis=0)
        rss[k, ids] = rss_k
        iterations[k, ids] = state.iterations
        converged[k, ids] = state.converged

        log_rss_k = np.log(np.maximum(rss_k, RSS_FLOOR))
        if k > 0:
            delta_hist[(k - 1) % t_win, ids] = np.abs(
                (log_rss_k - prev_log_rss[ids]) / (log_lam[k] - log_lam[k - 1])
            )
        prev_log_rss[ids] = log_rss_k

        all_fired = np.ones(len(ids), dtype=bool)
        if k >= t_win:  # 1-based k+1 >= T+1
            mean_delta = delta_hist[:, ids].mean(axis=0)
            for th in thresholds:
                hit_mask = (~fired[th][ids]) & (mean_delta < th)
                hit = ids[hit_mask]
                kstar[th][hit] = k
                fired[th][hit] = True
                beta[th][:, hit] = state.gamma[:, hit_mask]
                all_fired &= fired[th][ids]
        else:
            all_fired[:] = False

        if k == big_k - 1:
            for th in thresholds:
                rest = ids[~fired[th][ids]]
                rest_mask = ~fired[th][ids]
                beta[th][:, rest] = state.gamma[:, rest_mask]
            break
        if not full_path and np.any(all_fired):
            keep = ~all_fired
            if not np.any(keep):
                break
            ids = ids[keep]
            state = AdmmState(
                state.gamma[:, keep].copy(), state.eta[:, keep].copy(),
                state.u[:, keep].copy(), state.t[:, keep].copy(),
                state.rho, state.iterations[keep], state.converged[keep],
            )

    return PathFit(lambdas, rss, kstar, fired, beta, iterations, converged)


def select_lambda(mats: ProblemMatrices, y: np.ndarray, grid: LambdaGrid,
                  cfg: SolverConfig):
    """Fit the path and return (lambda_opt, rss_path, fired) per voxel."""
    fit = fit_lambda_path(mats, y, grid, cfg, full_path=True)
    th = grid.threshold
    return fit.selected_lambda(th), fit.rss, fit.fired[th]
