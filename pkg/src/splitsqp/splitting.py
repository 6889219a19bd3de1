"""Monotone splitting SQP for the two-block problem.

Each iteration solves three small subproblems at the current point: a box
QP in ``x``, a box QP in ``y`` (independent of each other) and a closed-form
projection for the slack ``z``. Their solutions define a descent direction
for the augmented Lagrangian, an Armijo backtracking search picks the step,
and the multiplier moves by ``xi`` times the new constraint residual.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .boxqp import (BoxQP, BoxQPBudgetError, NotPositiveDefiniteError, cholesky_or_raise,
                    project_box, recover_projection_multipliers, solve_box_qp)
from .kkt import Multipliers, kkt_residual_original, kkt_residual_reformulated, \
    map_multipliers_to_original
from .problem import (EvaluationError, Iterate, ReformulatedProblem, SolverConfig,
                      aug_lagrangian, aug_lagrangian_grad, feasibility_residual,
                      is_box_feasible, make_iterate, reformulate)
from .report import CONVERGED, IterationTrace, SolveReport

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    """Armijo backtracking ran out of budget."""


class SolverInputError(ValueError):
    """Invalid starting point or configuration for a solve."""


@dataclass(frozen=True, eq=False)
class Direction:
    d_x: np.ndarray
    d_y: np.ndarray
    d_z: np.ndarray
    norm_inf: float
    quad_norm: float

    @property
    def u(self):
        return np.concatenate([self.d_x, self.d_y, self.d_z])

    @property
    def is_zero(self):
        return self.norm_inf == 0.0


@dataclass(frozen=True, eq=False)
class Step1Result:
    """Subproblem solutions at ``w_k`` with their bound multipliers.

    ``Hx_total``/``Hy_total`` are the x/y blocks of the direction metric;
    the z block is ``beta * I``. A joint subproblem sets ``H_joint`` instead,
    and the direction is then measured in that matrix.
    """

    x_tilde: np.ndarray
    y_tilde: np.ndarray
    z_tilde: np.ndarray
    alpha_x: np.ndarray
    gamma_x: np.ndarray
    alpha_y: np.ndarray
    gamma_y: np.ndarray
    alpha_z: np.ndarray
    gamma_z: np.ndarray
    Hx_total: np.ndarray
    Hy_total: np.ndarray
    inner_iterations: tuple = (0, 0)
    H_joint: Optional[np.ndarray] = None


# -- Step 1 ------------------------------------------------------------------

def _block_qp(H_model, coupling, grad, lower, upper, center, beta, what):
    H = H_model + beta * coupling
    try:
        return BoxQP(H, grad, lower - center, upper - center)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            f"{what}: H + beta*M'M is not positive definite (smallest eigenvalue "
            f"{exc.smallest_pivot:.3e}); regularize the Hessian approximation",
            exc.smallest_pivot) from None


def build_x_subproblem(rp: ReformulatedProblem, w: Iterate, H_x, beta) -> BoxQP:
    """x-subproblem in the shift ``d = x - x_k``.

    ``H = H_x + beta E'E``, ``g = grad_x L_beta(w_k)``, box ``[l - x_k, u - x_k]``.
    """
    g_x, _, _ = aug_lagrangian_grad(rp, w, beta)
    l, u = rp.x_bounds
    return _block_qp(np.asarray(H_x, dtype=float), rp.EtE, g_x, l, u, w.x, beta, "x-subproblem")


def build_y_subproblem(rp: ReformulatedProblem, w: Iterate, H_y, beta) -> BoxQP:
    """Mirror of :func:`build_x_subproblem` with ``F`` and ``[p, q]``."""
    _, g_y, _ = aug_lagrangian_grad(rp, w, beta)
    p, q = rp.y_bounds
    return _block_qp(np.asarray(H_y, dtype=float), rp.FtF, g_y, p, q, w.y, beta, "y-subproblem")


def solve_z_explicit(rp: ReformulatedProblem, w: Iterate, beta):
    """Closed-form slack update ``P_[r,s](C x_k + D y_k - lam_ineq / beta)``.

    Returns ``(z_tilde, alpha_z, gamma_z)``.
    """
    m1 = rp.m1
    band = (rp.E @ w.x + rp.F @ w.y)[m1:]
    z_hat = band - w.lam[m1:] / beta
    r, s = rp.z_bounds
    z_tilde = project_box(z_hat, r, s)
    alpha, gamma = recover_projection_multipliers(z_tilde, z_hat, beta, r, s)
    return z_tilde, alpha, gamma


def split_step1(rp, w, H_x, H_y, beta, qp_tol=1e-10, executor=None) -> Step1Result:
    """Solve the x-, y- and z-subproblems at ``w``."""
    qp_x = build_x_subproblem(rp, w, H_x, beta)
    qp_y = build_y_subproblem(rp, w, H_y, beta)
    if executor is not None:
        fx = executor.submit(solve_box_qp, qp_x, qp_tol)
        fy = executor.submit(solve_box_qp, qp_y, qp_tol)
        sx, sy = fx.result(), fy.result()
    else:
        sx, sy = solve_box_qp(qp_x, qp_tol), solve_box_qp(qp_y, qp_tol)
    z_tilde, az, gz = solve_z_explicit(rp, w, beta)
    x_tilde = _clamp(w.x + sx.v_star, *rp.x_bounds)
    y_tilde = _clamp(w.y + sy.v_star, *rp.y_bounds)
    return Step1Result(x_tilde, y_tilde, z_tilde, sx.alpha, sx.gamma, sy.alpha, sy.gamma,
                       az, gz, qp_x.H, qp_y.H, (sx.inner_iterations, sy.inner_iterations))


def _clamp(v, lower, upper):
    # x_k + d can round past a bound by an ulp
    return project_box(v, lower, upper)


# -- Steps 2-4 ---------------------------------------------------------------

def compute_direction(w: Iterate, x_tilde, y_tilde, z_tilde, H_u) -> Direction:
    """``d = u_tilde - u_k`` and its squared norm in ``diag(Hx, Hy, beta I)``.

    ``H_u`` is the triple ``(Hx_total, Hy_total, beta)``, or a single square
    matrix acting on the stacked direction.
    """
    d_x = np.asarray(x_tilde, dtype=float) - w.x
    d_y = np.asarray(y_tilde, dtype=float) - w.y
    d_z = np.asarray(z_tilde, dtype=float) - w.z
    if isinstance(H_u, np.ndarray):
        d = np.concatenate([d_x, d_y, d_z])
        quad = float(d @ (H_u @ d))
    else:
        Hx, Hy, beta = H_u
        quad = float(d_x @ (Hx @ d_x) + d_y @ (Hy @ d_y) + beta * (d_z @ d_z))
    norm = max(float(np.max(np.abs(d), initial=0.0)) for d in (d_x, d_y, d_z))
    return Direction(d_x, d_y, d_z, norm, max(quad, 0.0))


def _armijo(rp, w, d, config, merit0=None):
    beta = config.beta
    merit0 = aug_lagrangian(rp, w, beta) if merit0 is None else merit0
    if d.is_zero:
        return 1.0, 0, merit0, merit0
    # roundoff allowance so that a certified-descent step is not rejected by
    # cancellation in the merit difference
    slack = 16.0 * np.finfo(float).eps * max(1.0, abs(merit0))
    t = 1.0
    for j in range(config.max_backtracks + 1):
        trial = w.with_primal(w.x + t * d.d_x, w.y + t * d.d_y, w.z + t * d.d_z)
        try:
            merit = aug_lagrangian(rp, trial, beta)
        except EvaluationError:
            merit = np.inf
        if merit <= merit0 - t * config.rho * d.quad_norm + slack:
            return t, j, merit0, merit
        t *= config.sigma
    raise LineSearchError(
        f"no Armijo step after {config.max_backtracks} backtracks "
        f"(|d|_inf={d.norm_inf:.3e}, |d|_H^2={d.quad_norm:.3e}); "
        "the direction is probably not a descent direction")


def armijo_search(rp, w, d: Direction, config: SolverConfig):
    """Largest ``t`` in ``{1, sigma, sigma^2, ...}`` with sufficient merit decrease.

    Returns ``(t, backtracks)``; a zero direction gives ``t = 1`` with no search.
    """
    t, j, _, _ = _armijo(rp, w, d, config)
    return t, j


def update_dual(w: Iterate, xi, rp: ReformulatedProblem):
    """``lam + xi * (E x + F y + G z - c)`` at the (already updated) primal point."""
    res, _ = feasibility_residual(rp, w)
    return w.lam + xi * res


# -- Hessian models ----------------------------------------------------------

def _shift_until_pd(H, coupling, beta, what):
    shift = 0.0
    tau = 1e-6
    n = H.shape[0]
    while True:
        try:
            cholesky_or_raise(H + shift * np.eye(n) + beta * coupling, what)
            return H + shift * np.eye(n) if shift else H, shift
        except NotPositiveDefiniteError:
            if tau > 1e12:
                raise
            shift = tau
            tau *= 2.0


def _floor_shift(H, coupling, beta, eta):
    n = H.shape[0]
    if n == 0:
        return H, 0.0
    lam_min = float(np.linalg.eigvalsh(H + beta * coupling)[0])
    shift = max(0.0, eta - lam_min)
    return (H + shift * np.eye(n) if shift else H), shift


def model_hessians(rp, w, config, hessians=None):
    """Hessian approximations ``(H_x, H_y, shift_x, shift_y)`` for the current point.

    ``exact`` uses the objective Hessians, adding ``tau I`` (``tau`` doubled
    from ``1e-6``) only when ``H + beta M'M`` fails a Cholesky test.
    ``identity-shift`` shifts the exact Hessians so that the smallest
    eigenvalue of ``H + beta M'M`` is at least ``config.eta``.
    ``user`` takes ``hessians=(hx, hy)``, each a matrix or a callable of the
    block variable.
    """
    pr = rp.problem
    beta = config.beta
    mode = config.hessian_mode
    if mode == "user":
        if hessians is None:
            raise SolverInputError("hessian_mode='user' needs hessians=(hx, hy)")
        hx, hy = hessians
        Hx = np.asarray(hx(w.x) if callable(hx) else hx, dtype=float).reshape(pr.n1, pr.n1)
        Hy = np.asarray(hy(w.y) if callable(hy) else hy, dtype=float).reshape(pr.n2, pr.n2)
        return Hx, Hy, 0.0, 0.0
    Hx = np.asarray(pr.f_hess(w.x), dtype=float).reshape(pr.n1, pr.n1)
    Hy = np.asarray(pr.theta_hess(w.y), dtype=float).reshape(pr.n2, pr.n2)
    Hx, Hy = 0.5 * (Hx + Hx.T), 0.5 * (Hy + Hy.T)
    if mode == "identity-shift":
        Hx, sx = _floor_shift(Hx, rp.EtE, beta, config.eta)
        Hy, sy = _floor_shift(Hy, rp.FtF, beta, config.eta)
    else:
        Hx, sx = _shift_until_pd(Hx, rp.EtE, beta, "x-subproblem")
        Hy, sy = _shift_until_pd(Hy, rp.FtF, beta, "y-subproblem")
    return Hx, Hy, sx, sy


# -- one iteration -----------------------------------------------------------

def _advance(rp, w, sub, config, hess_shift=(0.0, 0.0)):
    """Steps 2-4 given the Step 1 result; returns ``(w_next, trace)``."""
    t0 = time.perf_counter()
    beta = config.beta
    metric = sub.H_joint if sub.H_joint is not None else (sub.Hx_total, sub.Hy_total, beta)
    d = compute_direction(w, sub.x_tilde, sub.y_tilde, sub.z_tilde, metric)
    g = aug_lagrangian_grad(rp, w, beta)
    dir_deriv = float(np.concatenate(g) @ d.u)
    t, backtracks, merit0, merit1 = _armijo(rp, w, d, config)
    if d.is_zero:
        x, y, z = w.x, w.y, w.z
    else:
        x = _clamp(w.x + t * d.d_x, *rp.x_bounds)
        y = _clamp(w.y + t * d.d_y, *rp.y_bounds)
        z = _clamp(w.z + t * d.d_z, *rp.z_bounds)
    moved = Iterate(x, y, z, w.lam, w.k)
    res, feas = feasibility_residual(rp, moved)
    lam = w.lam + config.xi * res
    w_next = Iterate(x, y, z, lam, w.k + 1)
    merit2 = aug_lagrangian(rp, w_next, beta)
    trace = IterationTrace(
        k=w.k, merit_before=merit0, merit_after=merit1, merit_next=merit2,
        step_size=t, backtracks=backtracks, d_norm_inf=d.norm_inf, quad_norm=d.quad_norm,
        directional_derivative=dir_deriv, feasibility=feas, res_sq_next=float(res @ res),
        dual_update_norm=config.xi * float(np.max(np.abs(res), initial=0.0)),
        inner_iterations=tuple(sub.inner_iterations), wall_time=time.perf_counter() - t0,
        hessian_shift=tuple(hess_shift), dual_only=d.is_zero, direction=d)
    return w_next, trace


def step(rp, w, H_x, H_y, config: SolverConfig, executor=None):
    """One full iteration from ``w`` with the given Hessian models.

    Returns ``(w_next, trace)``. When the direction is zero and ``w`` is
    feasible within ``config.feas_tolerance`` the point is a KKT point:
    ``w`` is returned unchanged and ``trace`` is ``None``.
    """
    t0 = time.perf_counter()
    sub = split_step1(rp, w, H_x, H_y, config.beta, config.qp_tol, executor)
    d_norm = max(float(np.max(np.abs(a - b), initial=0.0))
                 for a, b in ((sub.x_tilde, w.x), (sub.y_tilde, w.y), (sub.z_tilde, w.z)))
    _, feas = feasibility_residual(rp, w)
    if d_norm == 0.0 and feas <= config.feas_tolerance(rp):
        return w, None
    w_next, trace = _advance(rp, w, sub, config)
    trace.wall_time = time.perf_counter() - t0
    return w_next, trace


# -- the loop ------------------------------------------------------------------

def terminal_multipliers(rp, w, sub, beta):
    """Multipliers certifying ``w``: bound multipliers from the subproblems and
    the first-order estimate ``lam - beta * res`` for the equality constraints."""
    res, _ = feasibility_residual(rp, w)
    return Multipliers(w.lam - beta * res, sub.alpha_x, sub.gamma_x, sub.alpha_y, sub.gamma_y,
                       sub.alpha_z, sub.gamma_z)


def _matrix_inf_norm(H):
    return float(np.max(np.sum(np.abs(H), axis=1), initial=0.0))


def build_report(rp, w, sub, config, *, algorithm, status, message, trace, wall_time,
                 problem_doc=None, metric_norm=None, certify=None):
    mult = terminal_multipliers(rp, w, sub, config.beta)
    pr = rp.problem
    if certify is None:
        kkt = kkt_residual_reformulated(rp, w.x, w.y, w.z, mult)
        kkt_orig = kkt_residual_original(pr, w.x, w.y, map_multipliers_to_original(mult, rp.m1))
    else:
        kkt, kkt_orig = certify(rp, w, sub)
    d_norm = max(float(np.max(np.abs(a - b), initial=0.0))
                 for a, b in ((sub.x_tilde, w.x), (sub.y_tilde, w.y), (sub.z_tilde, w.z)))
    if metric_norm is None and sub.H_joint is not None:
        metric_norm = _matrix_inf_norm(sub.H_joint)
    elif metric_norm is None:
        metric_norm = max(_matrix_inf_norm(sub.Hx_total), _matrix_inf_norm(sub.Hy_total),
                          config.beta)
    _, feas = feasibility_residual(rp, w)
    # stationarity is bounded by |H_u|*|d|, complementarity by |mult|*|d|
    kkt_tol = (max(config.tol_direction, d_norm) * max(1.0, metric_norm, mult.bound_norm())
               + max(config.feas_tolerance(rp), feas))
    return SolveReport(
        algorithm=algorithm, status=status, message=message, iterations=w.k,
        x=w.x.copy(), y=w.y.copy(), z=w.z.copy(), lam=w.lam.copy(), multipliers=mult,
        objective=pr.objective(w.x, w.y), phi_eq=feas, d_norm_inf=d_norm,
        wall_time=wall_time, kkt=kkt, kkt_original=kkt_orig, kkt_tolerance=kkt_tol,
        trace=trace, config=config.to_dict(), problem_doc=problem_doc)


def default_start(rp):
    """Box-feasible start: the projection of the origin, with ``z`` the
    projection of the implied band values and ``lam`` all ones."""
    pr = rp.problem
    x = project_box(np.zeros(pr.n1), pr.l, pr.u)
    y = project_box(np.zeros(pr.n2), pr.p, pr.q)
    z = project_box(pr.C @ x + pr.D @ y, pr.r, pr.s)
    return make_iterate(rp, x, y, z)


def run_loop(rp, w0, config, step1: Callable, *, algorithm, hessians=None,
             problem_doc=None, certify: Optional[Callable] = None,
             callback: Optional[Callable] = None):
    """Generic outer loop shared by the splitting solver, its baseline and
    the convex-set extension.

    ``step1(rp, w, Hx, Hy)`` returns a :class:`Step1Result`; ``certify(rp, w, sub)``
    optionally replaces the default terminal KKT residuals; ``callback(w)`` is
    called with every accepted iterate.
    """
    if not is_box_feasible(rp, w0):
        raise SolverInputError("starting point violates its box constraints")
    tol_feas = config.feas_tolerance(rp)
    w = w0
    trace = []
    stalls = 0
    status, message = "max_iter", f"iteration budget {config.max_iter} exhausted"
    start = time.perf_counter()
    sub = None
    while True:
        t0 = time.perf_counter()
        try:
            Hx, Hy, sx, sy = model_hessians(rp, w, config, hessians)
            sub = step1(rp, w, Hx, Hy)
        except (NotPositiveDefiniteError, BoxQPBudgetError) as exc:
            status, message = "subproblem_failed", str(exc)
            break
        d_norm = max(float(np.max(np.abs(a - b), initial=0.0))
                     for a, b in ((sub.x_tilde, w.x), (sub.y_tilde, w.y), (sub.z_tilde, w.z)))
        _, feas = feasibility_residual(rp, w)
        if d_norm <= config.tol_direction and feas <= tol_feas:
            status, message = CONVERGED, "direction and feasibility tolerances met"
            break
        if w.k >= config.max_iter:
            break
        try:
            w_next, tr = _advance(rp, w, sub, config, (sx, sy))
        except LineSearchError as exc:
            status, message = "line_search_failed", str(exc)
            break
        tr.wall_time = time.perf_counter() - t0
        trace.append(tr)
        stalls = stalls + 1 if d_norm <= config.tol_direction else 0
        w = w_next
        if callback is not None:
            callback(w)
        if stalls >= config.max_dual_only:
            status = "stalled"
            message = (f"{stalls} consecutive steps with |d|_inf <= {config.tol_direction:g} "
                       f"but feasibility {feas:.3e} > {tol_feas:.3e}")
            break
    wall = time.perf_counter() - start
    if sub is None or status == "subproblem_failed":
        raise RuntimeError(f"{algorithm}: {message}")
    if sub is not None and status in ("stalled",):
        # the last subproblem result belongs to the previous iterate
        Hx, Hy, _, _ = model_hessians(rp, w, config, hessians)
        sub = step1(rp, w, Hx, Hy)
    if status != CONVERGED:
        log.warning("%s stopped without convergence: %s", algorithm, message)
    return build_report(rp, w, sub, config, algorithm=algorithm, status=status,
                        message=message, trace=trace, wall_time=wall, problem_doc=problem_doc,
                        certify=certify)


def solve(problem, w0: Optional[Iterate] = None, config: Optional[SolverConfig] = None,
          hessians=None, problem_doc=None, callback=None) -> SolveReport:
    """Run the splitting SQP method until the direction and feasibility
    tolerances hold or a budget runs out.

    Parameters
    ----------
    problem : TwoBlockProblem
    w0 : Iterate, optional
        Box-feasible start; defaults to :func:`default_start`.
    config : SolverConfig, optional
    hessians : tuple, optional
        ``(hx, hy)`` for ``hessian_mode='user'``.
    problem_doc : dict, optional
        Serialized problem to embed in the report.
    callback : callable, optional
        Called as ``callback(w)`` after every accepted iteration.

    Returns
    -------
    SolveReport
        ``status`` is ``converged``, ``max_iter``, ``stalled`` or
        ``line_search_failed``; the terminal certificate is always filled in.
    """
    config = config or SolverConfig()
    rp = reformulate(problem)
    w0 = default_start(rp) if w0 is None else w0
    executor = ThreadPoolExecutor(max_workers=2) if config.parallel_subproblems else None
    try:
        def step1(rp_, w, Hx, Hy):
            return split_step1(rp_, w, Hx, Hy, config.beta, config.qp_tol, executor)
        return run_loop(rp, w0, config, step1, algorithm="split", hessians=hessians,
                        problem_doc=problem_doc, callback=callback)
    finally:
        if executor is not None:
            executor.shutdown()
