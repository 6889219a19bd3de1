"""Full-QP baseline: the same outer loop, with one coupled box QP per iteration.

Step 1 minimizes the model

    grad f' dx + 1/2 |dx|^2_Hx + grad theta' dy + 1/2 |dy|^2_Hy
        + beta/2 |E x + F y + G z - c - lam/beta|^2

jointly over ``(x, y, z)`` in the product box. Direction, line search and
dual update are shared with the splitting solver.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .boxqp import BoxQP, NotPositiveDefiniteError, solve_box_qp
from .problem import Iterate, SolverConfig, aug_lagrangian_grad, reformulate
from .report import SolveReport
from .splitting import Step1Result, _clamp, default_start, run_loop


def build_full_subproblem(rp, w: Iterate, H_x, H_y, beta) -> BoxQP:
    """Coupled QP in the shift ``d = u - u_k`` of the stacked variable ``u = (x, y, z)``.

    ``H = diag(H_x, H_y, 0) + beta M'M`` with ``M = [E F G]``; ``g`` is the
    stacked merit gradient at ``w``.
    """
    pr = rp.problem
    n1, n2, m2 = pr.n1, pr.n2, pr.m2
    M = np.hstack([rp.E, rp.F, rp.G])
    H = beta * (M.T @ M)
    H[:n1, :n1] += np.asarray(H_x, dtype=float)
    H[n1:n1 + n2, n1:n1 + n2] += np.asarray(H_y, dtype=float)
    g = np.concatenate(aug_lagrangian_grad(rp, w, beta))
    lower = np.concatenate([pr.l, pr.p, pr.r]) - w.u
    upper = np.concatenate([pr.u, pr.q, pr.s]) - w.u
    try:
        return BoxQP(H, g, lower, upper)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            f"full subproblem: diag(Hx, Hy, 0) + beta*M'M is not positive definite "
            f"(smallest eigenvalue {exc.smallest_pivot:.3e}); regularize the Hessian "
            "approximation", exc.smallest_pivot) from None


def _shifted_full_subproblem(rp, w, H_x, H_y, beta):
    # the block shifts keep each diagonal block definite, but the coupled
    # matrix can still be indefinite; add tau I to both blocks until it is not
    tau = 0.0
    while True:
        try:
            return build_full_subproblem(rp, w, H_x + tau * np.eye(len(H_x)),
                                         H_y + tau * np.eye(len(H_y)), beta)
        except NotPositiveDefiniteError:
            if tau > 1e12:
                raise
            tau = 1e-6 if tau == 0.0 else 2.0 * tau


def full_step1(rp, w, H_x, H_y, beta, qp_tol=1e-10, shift=False) -> Step1Result:
    """Joint Step 1. With ``shift=True`` an indefinite coupled matrix is
    repaired by a common multiple of the identity on the x and y blocks."""
    pr = rp.problem
    n1, n2 = pr.n1, pr.n2
    H_x, H_y = np.asarray(H_x, dtype=float), np.asarray(H_y, dtype=float)
    if shift:
        qp = _shifted_full_subproblem(rp, w, H_x, H_y, beta)
    else:
        qp = build_full_subproblem(rp, w, H_x, H_y, beta)
    sol = solve_box_qp(qp, qp_tol)
    ix, iy = slice(0, n1), slice(n1, n1 + n2)
    iz = slice(n1 + n2, None)
    u = w.u + sol.v_star
    return Step1Result(
        _clamp(u[ix], pr.l, pr.u), _clamp(u[iy], pr.p, pr.q), _clamp(u[iz], pr.r, pr.s),
        sol.alpha[ix], sol.gamma[ix], sol.alpha[iy], sol.gamma[iy], sol.alpha[iz], sol.gamma[iz],
        qp.H[ix, ix], qp.H[iy, iy], (sol.inner_iterations, 0), H_joint=qp.H)


def solve_baseline(problem, w0: Optional[Iterate] = None, config: Optional[SolverConfig] = None,
                   hessians=None, problem_doc=None, callback=None) -> SolveReport:
    """Full-QP counterpart of :func:`splitsqp.splitting.solve`; same arguments and report."""
    config = config or SolverConfig()
    rp = reformulate(problem)
    w0 = default_start(rp) if w0 is None else w0

    def step1(rp_, w, Hx, Hy):
        return full_step1(rp_, w, Hx, Hy, config.beta, config.qp_tol,
                          shift=config.hessian_mode != "user")

    return run_loop(rp, w0, config, step1, algorithm="al", hessians=hessians,
                    problem_doc=problem_doc, callback=callback)
