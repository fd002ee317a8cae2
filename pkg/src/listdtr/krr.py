"""Kernel ridge regression with a per-dimension scaled Gaussian kernel.

The fit for one (stage, action) cell solves ``(K + n_a * lam * I) beta = y - c``
for an unpenalised offset ``c`` (zero unless centring is requested) and
predicts ``clip(c + sum_i K(x, X_i) beta_i, -B, B)``.  Leave-one-out error
comes from the closed form ``r_i = beta_i / [(K + n_a lam I)^{-1}]_ii``, which
is exact for refits that keep the ridge constant ``n_a * lam`` fixed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import KrrSolveError

log = logging.getLogger(__name__)

JITTER_START = 1e-12
JITTER_MAX = 1e-6
RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class KernelParams:
    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float).reshape(-1)
        if g.size == 0 or not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ValueError("kernel scales must be positive and finite")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @property
    def d(self) -> int:
        return self.gamma.size


def kernel_eval(params: KernelParams, x, z) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.shape != (params.d,):
        raise ValueError(f"expected two vectors of length {params.d}")
    return float(np.exp(-np.sum(params.gamma * (x - z) ** 2)))


def _weighted_sqdist(X, Z, gamma):
    """sum_j gamma_j (x_j - z_j)^2 for all row pairs, via centred inner products."""
    shift = X.mean(axis=0) if X.shape[0] else 0.0
    root = np.sqrt(gamma)
    Xs = (X - shift) * root
    Zs = Xs if Z is None else (Z - shift) * root
    xx = np.einsum("ij,ij->i", Xs, Xs)
    zz = xx if Z is None else np.einsum("ij,ij->i", Zs, Zs)
    D = xx[:, None] + zz[None, :] - 2.0 * (Xs @ Zs.T)
    np.maximum(D, 0.0, out=D)
    if Z is None:
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
    return D


def gram_matrix(params: KernelParams, X, Z=None) -> np.ndarray:
    """Kernel matrix between the rows of ``X`` and ``Z`` (``Z`` defaults to ``X``).

    With ``Z`` omitted the result is exactly symmetric with a unit diagonal.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ValueError(f"expected an n x {params.d} matrix")
    if Z is not None:
        Z = np.asarray(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != params.d:
            raise ValueError(f"expected an m x {params.d} matrix")
    return np.exp(-_weighted_sqdist(X, Z, params.gamma))


def _factor(A):
    """Cholesky factor of ``A`` with diagonal jitter escalation on failure."""
    jitter = 0.0
    while True:
        try:
            M = A if jitter == 0.0 else A + jitter * np.eye(A.shape[0])
            return linalg.cho_factor(M, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise KrrSolveError("kernel system is not positive definite even with jitter") from None


@dataclass(frozen=True, eq=False)
class KrrModel:
    support: np.ndarray
    beta: np.ndarray
    params: KernelParams
    lam: float
    bound: float
    offset: float = 0.0

    def raw(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.offset + gram_matrix(self.params, X, self.support) @ self.beta

    def predict(self, X) -> np.ndarray:
        """Clipped predictions for each row of ``X``."""
        return np.clip(self.raw(X), -self.bound, self.bound)


def fit_krr(X, y, params: KernelParams, lam: float, bound: float | None = None,
            offset: float = 0.0) -> KrrModel:
    """Kernel ridge fit of ``y - offset``; predictions add ``offset`` back before clipping."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 1 or X.shape[0] != n:
        raise ValueError("need at least one row and matching X, y")
    if not lam > 0:
        raise ValueError("ridge weight must be positive")
    if bound is None:
        bound = float(np.max(np.abs(y))) if n else 0.0
    y = y - offset
    A = gram_matrix(params, X)
    A[np.diag_indices(n)] += n * lam
    factor, _ = _factor(A)
    beta = linalg.cho_solve(factor, y, check_finite=False)
    target = RESIDUAL_RTOL * max(np.linalg.norm(y), np.finfo(float).tiny)
    for _ in range(3):
        resid = y - A @ beta
        if np.linalg.norm(resid) <= target:
            break
        beta = beta + linalg.cho_solve(factor, resid, check_finite=False)
    else:
        if np.linalg.norm(y - A @ beta) > target:
            raise KrrSolveError("ridge system residual above tolerance after refinement")
    return KrrModel(X.copy(), beta, params, float(lam), float(bound), float(offset))


def predict(model: KrrModel, x):
    """Clipped prediction at a single point (or each row of a matrix)."""
    x = np.asarray(x, dtype=float)
    out = model.predict(x)
    return float(out[0]) if x.ndim == 1 else out


def loocv_mse(X, y, params: KernelParams, lam: float) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 2:
        raise ValueError("leave-one-out needs at least two rows")
    K = gram_matrix(params, X)
    ridge = n * lam
    A = K.copy()
    A[np.diag_indices(n)] += ridge
    factor, _ = _factor(A)
    C = linalg.cho_solve(factor, np.eye(n), check_finite=False)
    beta = C @ y
    diag = np.diag(C).copy()
    resid = np.empty(n)
    safe = ridge * diag > 1e-10
    resid[safe] = beta[safe] / diag[safe]
    for i in np.flatnonzero(~safe):
        resid[i] = y[i] - _refit_without(K, y, ridge, i)
    return float(np.mean(resid ** 2))


def _refit_without(K, y, ridge, i):
    keep = np.arange(y.shape[0]) != i
    A = K[np.ix_(keep, keep)].copy()
    A[np.diag_indices(A.shape[0])] += ridge
    factor, _ = _factor(A)
    beta = linalg.cho_solve(factor, y[keep], check_finite=False)
    return float(K[i, keep] @ beta)


def loocv_explicit(X, y, params: KernelParams, lam: float) -> float:
    """Leave-one-out error by ``n`` refits, holding the ridge constant at ``n * lam``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    K = gram_matrix(params, X)
    return float(np.mean([(y[i] - _refit_without(K, y, n * lam, i)) ** 2 for i in range(n)]))


# --- hyperparameter search ----------------------------------------------------


CENTERING = ("none", "stage", "action")


@dataclass
class KrrSearchConfig:
    """Search over log-scales and log-ridge on a bounded box.

    ``method`` is one of ``"quasi_newton"`` (L-BFGS-B on the analytic
    leave-one-out gradient), ``"coordinate"`` (derivative-free coordinate
    descent) or ``"grid"`` (shared scale times ridge grid).  With ``pooled``
    a stage uses one (gamma, lambda) for all of its action cells.

    The short default iteration budget stops the search early on purpose:
    run to convergence, small cells drive lambda to its floor and overfit.
    ``center`` subtracts an unpenalised mean from the response, either one
    per stage or one per action cell, before the kernel fit.
    """

    method: str = "quasi_newton"
    starts: int = 3
    iterations: int = 5
    log_gamma_bounds: tuple[float, float] = (-8.0, 8.0)
    log_lambda_bounds: tuple[float, float] = (-12.0, 2.0)
    grid_gamma: tuple[float, ...] = (0.01, 0.1, 1.0)
    grid_lambda: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    standardize: bool = True
    default_lambda: float = 1e-3
    pooled: bool = True
    center: str = "action"

    def __post_init__(self):
        if self.method not in ("quasi_newton", "coordinate", "grid"):
            raise ValueError(f"unknown search method {self.method!r}")
        if self.starts < 1 or self.iterations < 1:
            raise ValueError("starts and iterations must be positive")
        if not self.grid_gamma or not self.grid_lambda:
            raise ValueError("grids must be non-empty")
        if self.center not in CENTERING:
            raise ValueError(f"center must be one of {', '.join(CENTERING)}")


@dataclass
class TuneResult:
    params: KernelParams
    lam: float
    objective: float
    evaluations: list = field(default_factory=list, repr=False)
    degenerate: bool = False

    def __iter__(self):
        return iter((self.params, self.lam))


def default_params(X, config: KrrSearchConfig | None = None):
    """Heuristic scales 1 / (d * var_j); used when tuning is impossible."""
    config = config or KrrSearchConfig()
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    var = X.var(axis=0) if X.shape[0] > 1 else np.ones(d)
    var = np.where(var > 0, var, 1.0)
    return KernelParams(1.0 / (d * var)), config.default_lambda


def _cell_loo(X, X2, y, gamma, lam, grad):
    """Sum of squared leave-one-out residuals of one cell, with its gradient."""
    n = y.shape[0]
    ridge = n * lam
    K = np.exp(-_weighted_sqdist(X, None, gamma))
    A = K.copy()
    A[np.diag_indices(n)] += ridge
    factor, _ = _factor(A)
    C = linalg.cho_solve(factor, np.eye(n), check_finite=False)
    beta = C @ y
    cdiag = np.diag(C)
    r = beta / cdiag
    total = float(r @ r)
    if not grad:
        return total, None
    a = r / cdiag
    b = r * beta / cdiag ** 2
    Ca = C @ a
    M = (C * b) @ C
    P = K * (M - np.outer(Ca, beta))
    rows, cols = P.sum(axis=1), P.sum(axis=0)
    quad = np.einsum("ij,ij->j", X, P @ X)
    g = np.empty(gamma.size + 1)
    g[:-1] = 2.0 * (-gamma) * (X2.T @ rows + X2.T @ cols - 2.0 * quad)
    g[-1] = 2.0 * ridge * (-(Ca @ beta) + b @ np.einsum("ij,ij->i", C, C))
    return total, g


class _LooObjective:
    """Leave-one-out MSE and its gradient in (log gamma, log lambda).

    With several cells the residuals of all cells are pooled; each cell keeps
    its own ridge ``n_a * lambda``.
    """

    def __init__(self, cells):
        self.cells = []
        for X, y in cells:
            Xc = X - X.mean(axis=0)
            self.cells.append((Xc, Xc ** 2, y))
        self.n = sum(y.shape[0] for _, _, y in self.cells)
        self.evaluations = []

    def __call__(self, theta, grad=True):
        gamma = np.exp(theta[:-1])
        lam = np.exp(theta[-1])
        total, g = 0.0, np.zeros_like(theta)
        try:
            for X, X2, y in self.cells:
                part, dpart = _cell_loo(X, X2, y, gamma, lam, grad)
                total += part
                if grad:
                    g += dpart
        except KrrSolveError:
            self.evaluations.append((theta.copy(), np.inf))
            return (np.inf, np.zeros_like(theta)) if grad else np.inf
        f = total / self.n
        self.evaluations.append((theta.copy(), f))
        return (f, g / self.n) if grad else f

    def log_scaled(self, theta):
        """log MSE and its gradient; keeps the optimiser's stopping rule scale-free."""
        f, g = self(theta)
        if not np.isfinite(f) or f <= 0:
            return (np.inf if not np.isfinite(f) else -700.0), np.zeros_like(theta)
        return np.log(f), g / f


def tune_krr(X, y, config: KrrSearchConfig | None = None, seed=0, groups=None) -> TuneResult:
    """Minimise leave-one-out MSE over (gamma, lambda).

    ``groups`` splits the rows into cells that are fitted separately but
    share one (gamma, lambda); their leave-one-out residuals are pooled and
    cells with fewer than two rows are left out of the criterion.  The
    returned point is the best of every evaluated candidate; ties go to the
    earliest evaluation.
    """
    config = config or KrrSearchConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("tuning needs at least two rows")
    if np.ptp(y) == 0:
        params, lam = default_params(X, config)
        log.warning("constant response in a cell of %d rows; using default kernel parameters", n)
        return TuneResult(params, lam, float(np.mean(y ** 2)), [], degenerate=True)

    sd = X.std(axis=0)
    unit = np.where(sd > 0, sd, 1.0) if config.standardize else np.ones(d)
    Xw = X / unit
    if groups is None:
        cells = [(Xw, y)]
    else:
        groups = np.asarray(groups)
        if groups.shape != (n,):
            raise ValueError("groups must label every row")
        cells = [(Xw[groups == g], y[groups == g]) for g in np.unique(groups)
                 if np.count_nonzero(groups == g) >= 2]
        if not cells:
            raise ValueError("tuning needs a cell with at least two rows")
    objective = _LooObjective(cells)
    lo_g, hi_g = config.log_gamma_bounds
    lo_l, hi_l = config.log_lambda_bounds
    lower = np.r_[np.full(d, lo_g), lo_l]
    upper = np.r_[np.full(d, hi_g), hi_l]
    rng = np.random.default_rng(seed)

    if config.method == "grid":
        for g in config.grid_gamma:
            for lam in config.grid_lambda:
                objective(np.r_[np.full(d, np.log(g)), np.log(lam)], grad=False)
    else:
        var = Xw.var(axis=0)
        base = np.log(1.0 / (d * np.where(var > 0, var, 1.0)))
        for _ in range(config.starts):
            theta0 = np.r_[base + rng.uniform(-1.0, 1.0, d), rng.uniform(-8.0, -2.0)]
            theta0 = np.clip(theta0, lower, upper)
            if config.method == "quasi_newton":
                optimize.minimize(objective.log_scaled, theta0, jac=True, method="L-BFGS-B",
                                  bounds=list(zip(lower, upper)),
                                  options={"maxiter": config.iterations})
            else:
                _coordinate_descent(objective, theta0, lower, upper, config.iterations)

    scores = np.array([f for _, f in objective.evaluations])
    best = int(np.argmin(scores))
    theta = objective.evaluations[best][0]
    gamma = np.exp(theta[:-1]) / unit ** 2
    return TuneResult(KernelParams(gamma), float(np.exp(theta[-1])), float(scores[best]),
                      objective.evaluations)


def _coordinate_descent(objective, theta, lower, upper, sweeps):
    f = objective(theta, grad=False)
    step = 1.0
    for _ in range(sweeps):
        improved = False
        for c in range(theta.size):
            for delta in (step, -step):
                cand = theta.copy()
                cand[c] = np.clip(cand[c] + delta, lower[c], upper[c])
                if cand[c] == theta[c]:
                    continue
                fc = objective(cand, grad=False)
                if fc < f:
                    theta, f, improved = cand, fc, True
                    break
        if not improved:
            step /= 2.0
            if step < 1e-3:
                break
    return theta, f
