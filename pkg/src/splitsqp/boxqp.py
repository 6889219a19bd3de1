"""Strictly convex quadratic programs over a box.

Solves ``min g'v + 0.5 v'Hv  s.t.  lower <= v <= upper`` with ``H`` positive
definite, and returns the bound multipliers ``alpha`` (lower) and ``gamma``
(upper) satisfying ``Hv + g - alpha + gamma = 0``.

The main solver is a primal-dual active-set iteration: every pass fixes the
variables predicted active, solves the free block exactly with a Cholesky
factorization and re-predicts the sets from the multiplier estimates. It
stops when the prediction repeats, which certifies optimality. If the
prediction cycles, a projected Newton method with an Armijo safeguard
takes over and its result is used to warm-start a final active-set pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """The quadratic term is not positive definite.

    ``smallest_pivot`` is the smallest eigenvalue of the offending matrix.
    """

    def __init__(self, message, smallest_pivot):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class BoxQPBudgetError(RuntimeError):
    """Iteration budget exhausted; carries the best iterate found."""

    def __init__(self, message, best, residual):
        super().__init__(message)
        self.best = best
        self.residual = residual


def cholesky_or_raise(H, what="matrix"):
    """Lower Cholesky factor of ``H``; raises with the smallest eigenvalue on failure."""
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        L = None
    if L is None or not np.all(np.diag(L) > 0.0):
        lam_min = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0]) if H.size else 0.0
        raise NotPositiveDefiniteError(
            f"{what} is not positive definite (smallest eigenvalue {lam_min:.3e}); "
            "regularize the Hessian approximation", lam_min)
    return L


@dataclass(frozen=True, eq=False)
class BoxQP:
    """Quadratic ``g'v + 0.5 v'Hv`` over ``[lower, upper]``.

    Construction checks symmetry, ``lower < upper`` and positive
    definiteness (a Cholesky factorization with positive pivots).
    """

    H: np.ndarray
    g: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        n = np.asarray(self.g).size
        H = H.reshape(n, n)
        g = np.asarray(self.g, dtype=float).reshape(n)
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("H must be symmetric")
        if not np.all(lower < upper):
            raise ValueError("box must satisfy lower < upper componentwise")
        H = 0.5 * (H + H.T)
        chol = cholesky_or_raise(H, "QP Hessian")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "chol", chol)

    @property
    def n(self):
        return self.g.size

    @property
    def smallest_pivot(self):
        return float(np.min(np.diag(self.chol)) ** 2) if self.n else np.inf

    def objective(self, v):
        return float(self.g @ v + 0.5 * v @ (self.H @ v))


@dataclass(frozen=True, eq=False)
class BoxQPSolution:
    v_star: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    inner_iterations: int
    stationarity_residual: float
    method: str = "active-set"


def project_box(v, lower, upper):
    """Componentwise median of ``lower``, ``v`` and ``upper``."""
    return np.minimum(np.maximum(v, lower), upper)


def recover_projection_multipliers(v_star, hat_v, beta, lower, upper):
    """Bound multipliers of ``min beta/2 |v - hat_v|^2`` over the box at ``v_star``.

    Returns ``(alpha, gamma)`` with ``beta (v_star - hat_v) - alpha + gamma = 0``.
    """
    v_star = np.asarray(v_star, dtype=float)
    hat_v = np.asarray(hat_v, dtype=float)
    if not np.array_equal(v_star, project_box(hat_v, lower, upper)):
        raise ValueError("v_star is not the box projection of hat_v")
    diff = beta * (v_star - hat_v)
    at_lower = (v_star == lower) & (hat_v < lower)
    at_upper = (v_star == upper) & (hat_v > upper)
    alpha = np.where(at_lower, diff, 0.0)
    gamma = np.where(at_upper, -diff, 0.0)
    return alpha, gamma


def _multipliers(qp, v):
    grad = qp.H @ v + qp.g
    at_lower = v <= qp.lower
    at_upper = v >= qp.upper
    alpha = np.where(at_lower, np.maximum(grad, 0.0), 0.0)
    gamma = np.where(at_upper, np.maximum(-grad, 0.0), 0.0)
    resid = float(np.max(np.abs(grad - alpha + gamma), initial=0.0))
    return alpha, gamma, resid


def _residual_scale(qp, v):
    return max(1.0, float(np.max(np.abs(qp.g), initial=0.0)),
               float(np.max(np.abs(qp.H @ v), initial=0.0)))


def _solve_free(qp, v, free, active):
    """Solve the free block with the active variables fixed at their values in ``v``."""
    if not np.any(free):
        return v
    rhs = -qp.g[free]
    if np.any(active):
        rhs -= qp.H[np.ix_(free, active)] @ v[active]
    if np.all(free):
        sol = sla.cho_solve((qp.chol, True), rhs, check_finite=False)
    else:
        Hff = qp.H[np.ix_(free, free)]
        sol = sla.cho_solve(sla.cho_factor(Hff, lower=True, check_finite=False), rhs,
                            check_finite=False)
    v = v.copy()
    v[free] = sol
    return v


def _active_set(qp, v, max_iter):
    """Primal-dual active-set passes from ``v``. Returns ``(v, iterations, ok)``."""
    c = np.diag(qp.H).copy()
    lam = qp.H @ v + qp.g
    seen = set()
    prev = None
    for it in range(max_iter):
        with np.errstate(invalid="ignore"):
            low = lam + c * (qp.lower - v) > 0.0
            up = (lam + c * (qp.upper - v) < 0.0) & ~low
        key = (np.packbits(low).tobytes(), np.packbits(up).tobytes())
        if key == prev:
            return v, it, True
        if key in seen:
            return v, it, False
        seen.add(key)
        prev = key
        active = low | up
        v = v.copy()
        v[low] = qp.lower[low]
        v[up] = qp.upper[up]
        v = _solve_free(qp, v, ~active, active)
        lam = qp.H @ v + qp.g
        lam[~active] = 0.0
    return v, max_iter, False


def _projected_newton(qp, v, max_iter, tol):
    """Projected Newton with Armijo backtracking along the projection arc."""
    value = qp.objective(v)
    it = 0
    for it in range(1, max_iter + 1):
        grad = qp.H @ v + qp.g
        clamped = ((v <= qp.lower) & (grad > 0)) | ((v >= qp.upper) & (grad < 0))
        free = ~clamped
        pg = np.where(free, grad, 0.0)
        if np.max(np.abs(pg), initial=0.0) <= tol * _residual_scale(qp, v):
            break
        search = np.zeros_like(v)
        Hff = qp.H[np.ix_(free, free)]
        search[free] = -sla.cho_solve(sla.cho_factor(Hff, lower=True), grad[free])
        step = 1.0
        while True:
            cand = project_box(v + step * search, qp.lower, qp.upper)
            cand_val = qp.objective(cand)
            if cand_val <= value + 0.1 * float(grad @ (cand - v)) or step < 1e-20:
                break
            step *= 0.5
        if cand_val >= value and step < 1e-20:
            break
        v, value = cand, cand_val
    return v, it


def solve_box_qp(qp: BoxQP, tol: float = 1e-10, x0=None, max_iter=None) -> BoxQPSolution:
    """Minimize a strictly convex quadratic over a box.

    Parameters
    ----------
    qp : BoxQP
        Problem data; ``H`` was verified positive definite at construction.
    tol : float
        Bound on the infinity norm of ``Hv + g - alpha + gamma``, relative
        to ``max(1, |g|_inf, |Hv|_inf)``.
    x0 : array_like, optional
        Starting point, projected onto the box. Defaults to the projection
        of the origin.
    max_iter : int, optional
        Budget for each active-set phase (default ``50 + 2 n``).

    Returns
    -------
    BoxQPSolution

    Raises
    ------
    BoxQPBudgetError
        If neither phase reaches the tolerance.
    """
    n = qp.n
    if n == 0:
        empty = np.zeros(0)
        return BoxQPSolution(empty, empty, empty, 0, 0.0)
    max_iter = 50 + 2 * n if max_iter is None else max_iter
    start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    v = project_box(start, qp.lower, qp.upper)

    v, iters, ok = _active_set(qp, v, max_iter)
    method = "active-set"
    if not ok:
        v_pn, pn_iters = _projected_newton(qp, project_box(v, qp.lower, qp.upper), max_iter, tol)
        iters += pn_iters
        v2, more, ok = _active_set(qp, v_pn, max_iter)
        iters += more
        v = v2 if ok else v_pn
        method = "projected-newton"
    v = project_box(v, qp.lower, qp.upper)
    alpha, gamma, resid = _multipliers(qp, v)
    if resid > tol * _residual_scale(qp, v):
        # one refinement pass on the identified free set
        free = (v > qp.lower) & (v < qp.upper)
        v = project_box(_solve_free(qp, v, free, ~free), qp.lower, qp.upper)
        alpha, gamma, resid = _multipliers(qp, v)
    if resid > tol * _residual_scale(qp, v):
        raise BoxQPBudgetError(
            f"box QP did not reach tolerance {tol:g} (residual {resid:.3e})", v, resid)
    return BoxQPSolution(v, alpha, gamma, iters, resid, method)
