"""Splitting SQP with general closed convex sets for the x and y blocks.

Each set is accessed only through its Euclidean projection. The x- and
y-subproblems become strictly convex quadratics over a set, solved by an
accelerated projected gradient method, and stationarity is measured by
projection residuals instead of explicit normal cones.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .boxqp import NotPositiveDefiniteError, cholesky_or_raise, project_box
from .kkt import ResidualBreakdown, _bound_terms, _inf_norm
from .problem import (Iterate, SolverConfig, aug_lagrangian_grad, feasibility_residual,
                      make_iterate, reformulate)
from .report import SolveReport
from .splitting import (SolverInputError, Step1Result, run_loop, solve_z_explicit,
                        terminal_multipliers)

_INF = np.inf


class SetSubproblemBudgetError(RuntimeError):
    """Projected-gradient budget exhausted; carries the best iterate."""

    def __init__(self, message, best, residual):
        super().__init__(message)
        self.best = best
        self.residual = residual


# -- sets ------------------------------------------------------------------------

class ProjectableSet:
    """Nonempty closed convex subset of ``R^dim`` given by its projection."""

    kind = "custom"

    def __init__(self, dim):
        self.dim = int(dim)

    def project(self, v):
        raise NotImplementedError

    def contains(self, v, tol=1e-10):
        v = np.asarray(v, dtype=float)
        return bool(np.max(np.abs(self.project(v) - v), initial=0.0) <= tol * max(1.0, _inf_norm(v)))

    def to_dict(self):
        raise TypeError(f"{type(self).__name__} is not serializable")


class BoxSet(ProjectableSet):
    kind = "box"

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.asarray(upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape or not np.all(self.lower < self.upper):
            raise ValueError("box needs lower < upper with matching lengths")
        super().__init__(self.lower.size)

    def project(self, v):
        return project_box(v, self.lower, self.upper)

    def to_dict(self):
        enc = lambda a: [("inf" if x > 0 else "-inf") if np.isinf(x) else float(x) for x in a]
        return {"kind": self.kind, "lower": enc(self.lower), "upper": enc(self.upper)}


class AffineSet(ProjectableSet):
    """``{v : M v = h}``; projection by a least-squares correction."""

    kind = "affine"

    def __init__(self, M, h):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.h = np.asarray(h, dtype=float).reshape(-1)
        if self.M.shape[0] != self.h.size:
            raise ValueError(f"M has {self.M.shape[0]} rows but h has length {self.h.size}")
        super().__init__(self.M.shape[1])
        self._pinv = np.linalg.pinv(self.M)
        if np.max(np.abs(self.M @ (self._pinv @ self.h) - self.h), initial=0.0) > \
                1e-9 * max(1.0, _inf_norm(self.h)):
            raise ValueError("affine set is empty (M v = h is inconsistent)")

    def project(self, v):
        v = np.asarray(v, dtype=float)
        return v - self._pinv @ (self.M @ v - self.h)

    def to_dict(self):
        return {"kind": self.kind, "M": self.M.tolist(), "h": self.h.tolist()}


class BallSet(ProjectableSet):
    kind = "ball"

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.radius = float(radius)
        if not self.radius > 0.0:
            raise ValueError("radius must be positive")
        super().__init__(self.center.size)

    def project(self, v):
        diff = np.asarray(v, dtype=float) - self.center
        norm = float(np.linalg.norm(diff))
        if norm <= self.radius:
            return np.array(v, dtype=float)
        return self.center + diff * (self.radius / norm)

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


class SimplexSet(ProjectableSet):
    """``{v >= 0 : sum(v) = total}``; projection by sorting."""

    kind = "simplex"

    def __init__(self, dim, total=1.0):
        super().__init__(dim)
        self.total = float(total)
        if not self.total > 0.0:
            raise ValueError("simplex total must be positive")

    def project(self, v):
        v = np.asarray(v, dtype=float)
        u = np.sort(v)[::-1]
        css = np.cumsum(u) - self.total
        idx = np.arange(1, v.size + 1)
        k = idx[u - css / idx > 0][-1]
        return np.maximum(v - css[k - 1] / k, 0.0)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "total": self.total}


class WholeSpace(ProjectableSet):
    kind = "whole-space"

    def project(self, v):
        return np.array(v, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


class CallbackSet(ProjectableSet):
    """User projection callback; API only."""

    def __init__(self, dim, project):
        super().__init__(dim)
        self._project = project

    def project(self, v):
        return np.asarray(self._project(np.asarray(v, dtype=float)), dtype=float)


def set_from_dict(doc) -> ProjectableSet:
    kind = doc.get("kind")
    dec = lambda a: np.array([float(x) for x in a])
    if kind == "box":
        return BoxSet(dec(doc["lower"]), dec(doc["upper"]))
    if kind == "affine":
        return AffineSet(doc["M"], doc["h"])
    if kind == "ball":
        return BallSet(doc["center"], doc["radius"])
    if kind == "simplex":
        return SimplexSet(doc["dim"], doc.get("total", 1.0))
    if kind == "whole-space":
        return WholeSpace(doc["dim"])
    raise ValueError(f"unknown or unserializable set kind {kind!r}")


# -- subproblem ------------------------------------------------------------------

def _lipschitz(H):
    n = H.shape[0]
    if n == 0:
        return 1.0
    top = sla.eigh(H, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
    # a small pad keeps the step strictly below 1/lambda_max under roundoff
    return 1.01 * float(top)


def solve_set_subproblem(H, g, center, pset: ProjectableSet, tol=1e-12, max_iter=200000):
    """Minimize ``g'(v - center) + 1/2 (v - center)' H (v - center)`` over ``pset``.

    Accelerated projected gradient with fixed step ``1/L`` (``L`` just above
    the largest eigenvalue of ``H``) and a restart whenever the objective increases. Stops when
    ``|v - P(v - grad q(v)/L)|_inf <= tol * max(1, |v|_inf)``.

    Returns ``(v_star, iterations, residual)``.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    center = np.asarray(center, dtype=float)
    n = g.size
    if n == 0:
        return np.zeros(0), 0, 0.0
    cholesky_or_raise(H, "set subproblem Hessian")
    L = _lipschitz(H)

    def grad(v):
        return g + H @ (v - center)

    def value(v):
        d = v - center
        return float(g @ d + 0.5 * d @ (H @ d))

    v = pset.project(center)
    mom, theta = v.copy(), 1.0
    f_old = value(v)
    best, best_res = v, _INF
    for it in range(1, max_iter + 1):
        v_new = pset.project(mom - grad(mom) / L)
        f_new = value(v_new)
        if f_new > f_old:
            # restart the momentum from the last point
            mom, theta = v.copy(), 1.0
            v_new = pset.project(v - grad(v) / L)
            f_new = value(v_new)
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        mom = v_new + ((theta - 1.0) / theta_new) * (v_new - v)
        v, theta, f_old = v_new, theta_new, f_new
        res = _inf_norm(v - pset.project(v - grad(v) / L))
        if res < best_res:
            best, best_res = v, res
        if res <= tol * max(1.0, _inf_norm(v)):
            return v, it, res
    raise SetSubproblemBudgetError(
        f"projected gradient did not reach {tol:g} in {max_iter} iterations "
        f"(best residual {best_res:.3e})", best, best_res)


# -- stationarity ----------------------------------------------------------------

def _lagrangian_grads(rp, x, y, lam):
    pr = rp.problem
    return (np.asarray(pr.f_grad(x), dtype=float) - rp.E.T @ lam,
            np.asarray(pr.theta_grad(y), dtype=float) - rp.F.T @ lam)


def stationarity_residual_B(rp, w: Iterate, sets, lam=None):
    """Projection-residual stationarity of ``w`` for the set-constrained problem.

    Maximum of ``|x - P_X(x - grad_x Lbar)|_inf``, the same for ``y``,
    ``|z - P_[r,s](z - lam_ineq)|_inf`` and the feasibility norm, where
    ``Lbar = f + theta - lam' res``. ``lam`` defaults to ``w.lam``.
    """
    X, Y = sets
    lam = w.lam if lam is None else np.asarray(lam, dtype=float)
    gx, gy = _lagrangian_grads(rp, w.x, w.y, lam)
    r, s = rp.z_bounds
    res_x = _inf_norm(w.x - X.project(w.x - gx))
    res_y = _inf_norm(w.y - Y.project(w.y - gy))
    # the z part of grad Lbar is -G' lam = lam_ineq
    res_z = _inf_norm(w.z - project_box(w.z - lam[rp.m1:], r, s))
    _, feas = feasibility_residual(rp, w)
    return max(res_x, res_y, res_z, feas)


def set_kkt_residuals(rp, x, y, z, mult, sets):
    """Projection-form KKT residuals for the set-constrained problem.

    ``mult.lam`` is the equality multiplier estimate; only ``alpha_z`` and
    ``gamma_z`` of the bound multipliers are used. Returns the slack-form
    and original-form :class:`ResidualBreakdown` pair.
    """
    X, Y = sets
    pr = rp.problem
    lam, az, gz = mult.lam, mult.alpha_z, mult.gamma_z
    gx, gy = _lagrangian_grads(rp, x, y, lam)
    st_x = _inf_norm(x - X.project(x - gx))
    st_y = _inf_norm(y - Y.project(y - gy))
    st_z = _inf_norm(lam[rp.m1:] - az + gz)
    sign, comp = _bound_terms([(az, z - pr.r), (gz, pr.s - z)])
    set_viol = max(_inf_norm(x - X.project(x)), _inf_norm(y - Y.project(y)))
    box = max(_inf_norm(np.maximum(pr.r - z, 0.0)), _inf_norm(np.maximum(z - pr.s, 0.0)))
    kkt = ResidualBreakdown(st_x, st_y, st_z, sign, comp,
                            max(_inf_norm(rp.residual(x, y, z)), set_viol, box))
    # original form: band multipliers act on C x + D y directly
    band_mult = gz - az
    ox = np.asarray(pr.f_grad(x), dtype=float) - pr.A.T @ lam[:rp.m1] + pr.C.T @ band_mult
    oy = np.asarray(pr.theta_grad(y), dtype=float) - pr.B.T @ lam[:rp.m1] + pr.D.T @ band_mult
    band = pr.C @ x + pr.D @ y
    sign_o, comp_o = _bound_terms([(az, band - pr.r), (gz, pr.s - band)])
    feas_o = max(_inf_norm(pr.A @ x + pr.B @ y - pr.b), set_viol,
                 _inf_norm(np.maximum(pr.r - band, 0.0)), _inf_norm(np.maximum(band - pr.s, 0.0)))
    orig = ResidualBreakdown(_inf_norm(x - X.project(x - ox)), _inf_norm(y - Y.project(y - oy)),
                             0.0, sign_o, comp_o, feas_o)
    return kkt, orig


# -- solver ----------------------------------------------------------------------

def set_problem(problem, X: ProjectableSet, Y: ProjectableSet):
    """Copy of ``problem`` whose x/y boxes are unbounded; the sets carry those constraints."""
    if X.dim != problem.n1 or Y.dim != problem.n2:
        raise ValueError(f"set dimensions ({X.dim}, {Y.dim}) do not match "
                         f"blocks ({problem.n1}, {problem.n2})")
    return replace(problem, l=np.full(problem.n1, -_INF), u=np.full(problem.n1, _INF),
                   p=np.full(problem.n2, -_INF), q=np.full(problem.n2, _INF))


def split_step1_sets(rp, w, H_x, H_y, beta, sets, tol=1e-12) -> Step1Result:
    X, Y = sets
    g_x, g_y, _ = aug_lagrangian_grad(rp, w, beta)
    Hx = np.asarray(H_x, dtype=float) + beta * rp.EtE
    Hy = np.asarray(H_y, dtype=float) + beta * rp.FtF
    try:
        x_t, ix, _ = solve_set_subproblem(Hx, g_x, w.x, X, tol)
        y_t, iy, _ = solve_set_subproblem(Hy, g_y, w.y, Y, tol)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            f"set subproblem: H + beta*M'M is not positive definite (smallest eigenvalue "
            f"{exc.smallest_pivot:.3e}); regularize the Hessian approximation",
            exc.smallest_pivot) from None
    z_t, az, gz = solve_z_explicit(rp, w, beta)
    zx, zy = np.zeros(rp.problem.n1), np.zeros(rp.problem.n2)
    return Step1Result(x_t, y_t, z_t, zx, zx, zy, zy, az, gz, Hx, Hy, (ix, iy))


def solve_B(problem, X: ProjectableSet, Y: ProjectableSet, w0: Optional[Iterate] = None,
            config: Optional[SolverConfig] = None, hessians=None, subproblem_tol=1e-12,
            problem_doc=None, callback=None) -> SolveReport:
    """Splitting SQP with ``x`` in ``X`` and ``y`` in ``Y``.

    The x/y boxes of ``problem`` are replaced by the sets; the band box on
    ``z`` is kept. Termination and the report follow
    :func:`splitsqp.splitting.solve`; the KKT fields hold projection
    residuals (bound multipliers exist only for ``z``).
    """
    config = config or SolverConfig()
    sp = set_problem(problem, X, Y)
    rp = reformulate(sp)
    if w0 is None:
        x0, y0 = X.project(np.zeros(X.dim)), Y.project(np.zeros(Y.dim))
        w0 = make_iterate(rp, x0, y0, project_box(sp.C @ x0 + sp.D @ y0, sp.r, sp.s))
    if not (X.contains(w0.x) and Y.contains(w0.y)):
        raise SolverInputError("starting point is not in the sets X, Y")

    def step1(rp_, w, Hx, Hy):
        return split_step1_sets(rp_, w, Hx, Hy, config.beta, (X, Y), subproblem_tol)

    def certify(rp_, w, sub):
        mult = terminal_multipliers(rp_, w, sub, config.beta)
        return set_kkt_residuals(rp_, w.x, w.y, w.z, mult, (X, Y))

    return run_loop(rp, w0, config, step1, algorithm="set-ext", hessians=hessians,
                    problem_doc=problem_doc, certify=certify, callback=callback)
