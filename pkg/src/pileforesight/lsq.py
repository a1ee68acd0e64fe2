"""Least-squares identification of image transition matrices.

Fits ``A`` in ``Y1 ~ A @ Y0`` where columns of ``Y0``/``Y1`` are vectorized
images before and after one fixed (canonical) push. The constrained variants
split into independent row problems because ``Y1[i, :] = A[i, :] @ Y0``:

* ``ols``    -- unconstrained, closed form with a tiny ridge;
* ``nonneg`` -- every row non-negative (Lawson-Hanson active set);
* ``rowsum`` -- every row on the probability simplex.

All row solvers work on the shared Gram matrices ``G = Y0 Y0^T`` and
``B = Y1 Y0^T`` so that the per-row cost does not depend on the sample count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "MODES",
    "PairedDataset",
    "SolverConfig",
    "TransitionMatrix",
    "ConditioningError",
    "ConvergenceError",
    "fit",
    "fit_ols",
    "fit_row_nonneg",
    "fit_row_sum1",
    "nnls_gram",
    "simplex_lsq_gram",
    "kkt_residual",
    "objective",
]

MODES = ("ols", "nonneg", "rowsum")


class ConditioningError(np.linalg.LinAlgError):
    """The Gram matrix is singular and no ridge was requested."""


class ConvergenceError(RuntimeError):
    """A row solver ran out of iterations."""

    def __init__(self, msg, row=None, residual=None):
        super().__init__(msg)
        self.row = row
        self.residual = residual


@dataclass(frozen=True)
class PairedDataset:
    Yk: np.ndarray
    Yk1: np.ndarray
    length_bucket: int = 0

    def __post_init__(self):
        y0 = np.atleast_2d(np.asarray(self.Yk, dtype=np.float64))
        y1 = np.atleast_2d(np.asarray(self.Yk1, dtype=np.float64))
        if y0.shape != y1.shape:
            raise ValueError(f"Yk {y0.shape} and Yk1 {y1.shape} must have equal shapes")
        if y0.shape[1] < 1:
            raise ValueError("dataset needs at least one pair")
        object.__setattr__(self, "Yk", y0)
        object.__setattr__(self, "Yk1", y1)

    @property
    def n_pairs(self) -> int:
        return self.Yk.shape[1]

    @property
    def dim(self) -> int:
        return self.Yk.shape[0]

    def gram(self):
        """Return ``(Y0 Y0^T, Y1 Y0^T)``."""
        return self.Yk @ self.Yk.T, self.Yk1 @ self.Yk.T


@dataclass(frozen=True)
class SolverConfig:
    ridge: float = 1e-8
    kkt_tol: float = 1e-6
    max_iters: int = 5000

    def __post_init__(self):
        if self.ridge < 0 or self.kkt_tol <= 0 or self.max_iters <= 0:
            raise ValueError("invalid solver configuration")


@dataclass(frozen=True)
class TransitionMatrix:
    A: np.ndarray
    mode: str
    ridge: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        a = np.array(self.A, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"transition matrix must be square, got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "A", a)


def _scale(G) -> float:
    return max(1.0, float(np.max(np.diag(G), initial=0.0)))


def objective(A, data: PairedDataset) -> float:
    """Frobenius norm of the fit residual ``Y1 - A Y0``."""
    A = A.A if isinstance(A, TransitionMatrix) else A
    return float(np.linalg.norm(data.Yk1 - A @ data.Yk))


def fit_ols(data: PairedDataset, cfg: SolverConfig = SolverConfig()) -> TransitionMatrix:
    G, B = data.gram()
    n = G.shape[0]
    ridge = cfg.ridge * float(np.trace(G)) / n
    lhs = G + ridge * np.eye(n)
    try:
        factor = sla.cho_factor(lhs, lower=True, check_finite=False)
        if ridge == 0.0 and np.min(np.abs(np.diag(factor[0]))) < 1e-10 * np.sqrt(_scale(G)):
            raise np.linalg.LinAlgError("numerically singular")
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            "Gram matrix is singular; use a positive ridge" if ridge == 0.0 else str(exc)
        ) from exc
    A = sla.cho_solve(factor, B.T, check_finite=False).T
    return TransitionMatrix(A, "ols", ridge)


def _solve_sym(G, rhs):
    try:
        return sla.solve(G, rhs, assume_a="pos", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return np.linalg.lstsq(G, rhs, rcond=None)[0]


def nnls_gram(G, b, tol=1e-10, max_iter=5000):
    """Minimize ``x^T G x / 2 - b^T x`` over ``x >= 0``.

    Lawson-Hanson active set in normal-equation form (Bro & de Jong). ``tol``
    is the absolute threshold on the dual ``w = b - G x`` for adding a
    variable to the passive set.

    Returns
    -------
    x : ndarray
    iters : int
        Number of outer iterations.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = b.copy()
    it = 0
    while True:
        cand = np.where(passive, -np.inf, w)
        j = int(np.argmax(cand))
        if cand[j] <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError("nnls did not converge", residual=float(cand[j]))
        it += 1
        passive[j] = True
        while True:
            idx = np.flatnonzero(passive)
            z = np.zeros(n)
            z[idx] = _solve_sym(G[np.ix_(idx, idx)], b[idx])
            if np.all(z[idx] > 0):
                break
            neg = idx[z[idx] <= 0]
            denom = x[neg] - z[neg]
            alpha = np.min(np.where(denom > 0, x[neg] / np.where(denom > 0, denom, 1.0), 1.0))
            x = x + alpha * (z - x)
            passive &= x > 1e-14 * max(1.0, float(np.max(x)))
            x[~passive] = 0.0
            if not passive.any():
                z = x
                break
        x = z
        w = b - G @ x
        # a freshly added column that cannot move off zero would loop forever
        if not passive[j]:
            w[j] = min(w[j], 0.0)
    return x, it


def simplex_lsq_gram(G, b, tol=1e-10, max_iter=5000):
    """Minimize ``x^T G x / 2 - b^T x`` over the probability simplex.

    Active set with the equality handled by a bordered KKT system. Returns
    ``(x, mu, iters)`` where ``mu`` is the multiplier of ``sum(x) = 1`` in the
    stationarity condition ``G x - b + mu = lambda >= 0``.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    j0 = int(np.argmin(0.5 * np.diag(G) - b))
    x = np.zeros(n)
    x[j0] = 1.0
    passive = np.zeros(n, dtype=bool)
    passive[j0] = True

    def solve_eq(idx):
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = G[np.ix_(idx, idx)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([b[idx], [1.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        return sol[:k], sol[k]

    it = 0
    while True:
        while True:
            idx = np.flatnonzero(passive)
            zp, mu = solve_eq(idx)
            z = np.zeros(n)
            z[idx] = zp
            if np.all(zp > 0):
                break
            neg = idx[zp <= 0]
            denom = x[neg] - z[neg]
            alpha = np.min(np.where(denom > 0, x[neg] / np.where(denom > 0, denom, 1.0), 1.0))
            x = x + alpha * (z - x)
            passive &= x > 1e-14
            x[~passive] = 0.0
            x /= x.sum()
        x = z
        lam = G @ x - b + mu
        cand = np.where(passive, np.inf, lam)
        j = int(np.argmin(cand))
        if cand[j] >= -tol:
            return x, float(mu), it
        if it >= max_iter:
            raise ConvergenceError("simplex least squares did not converge",
                                   residual=float(-cand[j]))
        it += 1
        passive[j] = True


def _row_fit(data, cfg, solver, mode):
    G, B = data.gram()
    scale = _scale(G)
    tol = 0.1 * cfg.kkt_tol * scale
    n = G.shape[0]
    A = np.zeros((n, n))
    for i in range(n):
        try:
            A[i] = solver(G, B[i], tol, cfg.max_iters)[0]
        except ConvergenceError as exc:
            raise ConvergenceError(f"row {i}: {exc}", row=i, residual=exc.residual) from exc
    return TransitionMatrix(A, mode, 0.0)


def fit_row_nonneg(data: PairedDataset, cfg: SolverConfig = SolverConfig()) -> TransitionMatrix:
    """Non-negative least squares, solved independently for every row."""
    return _row_fit(data, cfg, nnls_gram, "nonneg")


def fit_row_sum1(data: PairedDataset, cfg: SolverConfig = SolverConfig()) -> TransitionMatrix:
    """Least squares with every row constrained to the probability simplex."""
    return _row_fit(data, cfg, simplex_lsq_gram, "rowsum")


def fit(data: PairedDataset, mode: str, cfg: SolverConfig = SolverConfig()) -> TransitionMatrix:
    if mode == "ols":
        return fit_ols(data, cfg)
    if mode == "nonneg":
        return fit_row_nonneg(data, cfg)
    if mode == "rowsum":
        return fit_row_sum1(data, cfg)
    raise ValueError(f"unknown mode {mode!r}")


def kkt_residual(A, data: PairedDataset, mode: str | None = None, ridge: float | None = None,
                 active_tol: float = 1e-6) -> float:
    """Worst KKT violation over all rows, relative to the Gram scale.

    ``mode`` and ``ridge`` default to those recorded on a ``TransitionMatrix``.
    The scale is ``max(1, max diag(Y0 Y0^T))``.
    """
    if isinstance(A, TransitionMatrix):
        mode = A.mode if mode is None else mode
        ridge = A.ridge if ridge is None else ridge
        A = A.A
    mode = mode or "ols"
    ridge = ridge or 0.0
    G, B = data.gram()
    scale = _scale(G)
    g = A @ G - B
    if mode == "ols":
        return float(np.max(np.abs(g + ridge * A))) / scale
    if mode == "nonneg":
        primal = np.max(-A, initial=0.0)
        dual = np.max(-g, initial=0.0) / scale
        comp = np.max(np.abs(np.where(A > active_tol, g, 0.0)), initial=0.0) / scale
        return float(max(primal, dual, comp))
    if mode == "rowsum":
        support = A > active_tol
        cnt = np.maximum(support.sum(axis=1), 1)
        mu = -np.sum(np.where(support, g, 0.0), axis=1) / cnt
        lam = g + mu[:, None]
        primal = max(np.max(-A, initial=0.0), float(np.max(np.abs(A.sum(axis=1) - 1.0))))
        dual = np.max(-lam, initial=0.0) / scale
        comp = np.max(np.abs(np.where(support, lam, 0.0)), initial=0.0) / scale
        return float(max(primal, dual, comp))
    raise ValueError(f"unknown mode {mode!r}")
