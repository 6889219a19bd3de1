import numpy as np
import pytest

from oracles import enumerate_box_qp, kkt_instance, merit, random_two_block, shifted_pd
from splitsqp import SolverConfig, make_iterate, reformulate, solve
from splitsqp.problem import aug_lagrangian, aug_lagrangian_grad
from splitsqp.splitting import (SolverInputError, armijo_search, build_x_subproblem,
                                build_y_subproblem, compute_direction, default_start,
                                model_hessians, split_step1, step, update_dual)


def _state(rng, convex=True, n1=4, n2=3, m1=2, m2=2):
    pr = random_two_block(rng, n1, n2, m1, m2, convex=convex)
    rp = reformulate(pr)
    x, y = rng.uniform(pr.l, pr.u), rng.uniform(pr.p, pr.q)
    w = make_iterate(rp, x, y, rng.uniform(pr.r, pr.s), lam=rng.standard_normal(m1 + m2))
    return pr, rp, w


def test_block_subproblems_match_enumeration(rng):
    beta = 3.0
    for _ in range(10):
        pr, rp, w = _state(rng)
        Hx, Hy = pr.f_hess(w.x), pr.theta_hess(w.y)
        sub = split_step1(rp, w, Hx, Hy, beta)
        gx, gy, _ = aug_lagrangian_grad(rp, w, beta)
        E, F = rp.E, rp.F
        ref_x = enumerate_box_qp(Hx + beta * E.T @ E, gx, pr.l - w.x, pr.u - w.x)
        ref_y = enumerate_box_qp(Hy + beta * F.T @ F, gy, pr.p - w.y, pr.q - w.y)
        assert np.allclose(sub.x_tilde, w.x + ref_x, atol=1e-9)
        assert np.allclose(sub.y_tilde, w.y + ref_y, atol=1e-9)
        qp = build_x_subproblem(rp, w, Hx, beta)
        assert np.allclose(qp.H @ (sub.x_tilde - w.x) + qp.g - sub.alpha_x + sub.gamma_x, 0,
                           atol=1e-9)
        qp = build_y_subproblem(rp, w, Hy, beta)
        assert np.allclose(qp.H @ (sub.y_tilde - w.y) + qp.g - sub.alpha_y + sub.gamma_y, 0,
                           atol=1e-9)


def test_direction_norms(rng):
    pr, rp, w = _state(rng)
    xt, yt, zt = w.x + 0.1, w.y - 0.2, w.z + 0.3
    Hx, Hy = 2 * np.eye(pr.n1), 3 * np.eye(pr.n2)
    d = compute_direction(w, xt, yt, zt, (Hx, Hy, 5.0))
    assert d.norm_inf == pytest.approx(0.3)
    expect = 2 * 0.01 * pr.n1 + 3 * 0.04 * pr.n2 + 5 * 0.09 * pr.m2
    assert d.quad_norm == pytest.approx(expect)
    H = np.diag(np.r_[np.full(pr.n1, 2.0), np.full(pr.n2, 3.0), np.full(pr.m2, 5.0)])
    assert compute_direction(w, xt, yt, zt, H).quad_norm == pytest.approx(expect)


def test_armijo_step_satisfies_sufficient_decrease(rng):
    cfg = SolverConfig(beta=4.0)
    for _ in range(10):
        pr, rp, w = _state(rng, convex=False)
        Hx, Hy, _, _ = model_hessians(rp, w, cfg)
        sub = split_step1(rp, w, Hx, Hy, cfg.beta)
        d = compute_direction(w, sub.x_tilde, sub.y_tilde, sub.z_tilde,
                              (sub.Hx_total, sub.Hy_total, cfg.beta))
        t, j = armijo_search(rp, w, d, cfg)
        assert t == pytest.approx(cfg.sigma ** j)
        moved = w.with_primal(w.x + t * d.d_x, w.y + t * d.d_y, w.z + t * d.d_z)
        drop = aug_lagrangian(rp, w, cfg.beta) - aug_lagrangian(rp, moved, cfg.beta)
        assert drop >= t * cfg.rho * d.quad_norm - 1e-12


def test_dual_update(rng):
    pr, rp, w = _state(rng)
    lam = update_dual(w, 0.25, rp)
    res = np.r_[pr.A @ w.x + pr.B @ w.y - pr.b, pr.C @ w.x + pr.D @ w.y - w.z]
    assert np.allclose(lam, w.lam + 0.25 * res)


def test_step_decreases_merit(rng):
    cfg = SolverConfig(beta=2.0, xi=0.01)
    pr, rp, w = _state(rng, convex=False)
    Hx, Hy, _, _ = model_hessians(rp, w, cfg)
    w1, tr = step(rp, w, Hx, Hy, cfg)
    assert w1.k == w.k + 1
    assert tr.merit_next <= tr.merit_before
    assert merit(pr, w1.x, w1.y, w1.z, w1.lam, cfg.beta) == pytest.approx(tr.merit_next)


def test_converges_to_known_solution(rng):
    pr, lam, xs, ys, zs = kkt_instance(rng, active=True)
    rp = reformulate(pr)
    cfg = SolverConfig(beta=1.0, xi=1e-9, tol_direction=1e-8, tol_feas=1e-8, max_iter=5000)
    rep = solve(pr, default_start_with(rp, lam), cfg)
    assert rep.converged, rep.message
    assert np.allclose(rep.x, xs, atol=1e-5) and np.allclose(rep.y, ys, atol=1e-5)
    assert rep.kkt.total <= rep.kkt_tolerance


def default_start_with(rp, lam):
    w = default_start(rp)
    return make_iterate(rp, w.x, w.y, w.z, lam=lam)


def test_start_at_solution_stops_immediately(rng):
    pr, lam, xs, ys, zs = kkt_instance(rng)
    rp = reformulate(pr)
    rep = solve(pr, make_iterate(rp, xs, ys, zs, lam=lam),
                SolverConfig(beta=10.0, tol_direction=1e-8, tol_feas=1e-10))
    assert rep.converged and rep.iterations == 0 and not rep.trace


def test_parallel_subproblems_match_serial(rng):
    pr = random_two_block(rng, 8, 6, 2, 3, convex=False)
    runs = []
    for parallel in (False, True):
        cfg = SolverConfig(beta=5.0, xi=0.01, max_iter=20, parallel_subproblems=parallel)
        hist = []
        solve(pr, None, cfg, callback=hist.append)
        runs.append(hist)
    for a, b in zip(*runs):
        assert np.array_equal(a.u, b.u) and np.array_equal(a.lam, b.lam)


def test_infeasible_start_rejected(rng):
    pr = random_two_block(rng, 2, 2, 1, 1)
    rp = reformulate(pr)
    w = make_iterate(rp, pr.u + 1.0, np.zeros(2), (pr.r + pr.s) / 2)
    with pytest.raises(SolverInputError, match="box"):
        solve(pr, w)


def test_indefinite_user_hessian_fails_loudly(rng):
    pr = random_two_block(rng, 3, 2, 1, 1)
    cfg = SolverConfig(beta=1e-3, hessian_mode="user")
    with pytest.raises(RuntimeError, match="not positive definite"):
        solve(pr, None, cfg, hessians=(-10 * np.eye(3), np.eye(2)))


def test_hessian_modes_make_subproblems_convex(rng):
    pr, rp, w = _state(rng, convex=False)
    for mode in ("exact", "identity-shift"):
        cfg = SolverConfig(beta=1e-3, hessian_mode=mode, eta=1e-3)
        Hx, Hy, sx, sy = model_hessians(rp, w, cfg)
        assert np.linalg.eigvalsh(Hx + cfg.beta * rp.EtE)[0] > 0
        assert np.linalg.eigvalsh(Hy + cfg.beta * rp.FtF)[0] > 0
    with pytest.raises(SolverInputError):
        model_hessians(rp, w, SolverConfig(hessian_mode="user"))
    Hx, _, _, _ = model_hessians(rp, w, SolverConfig(hessian_mode="user"),
                                 hessians=(lambda x: shifted_pd(pr.f_hess(x)), np.eye(pr.n2)))
    assert np.allclose(Hx, shifted_pd(pr.f_hess(w.x)))


def test_report_fields(rng):
    pr = random_two_block(rng, 3, 3, 1, 1)
    rep = solve(pr, None, SolverConfig(beta=5.0, xi=0.01, max_iter=5))
    assert rep.status == "max_iter" and rep.iterations == 5 and len(rep.trace) == 5
    row = rep.csv_row()
    assert set(row) == {"iter", "F_c(P*)", "phi_eq", "C_t"}
    assert rep.objective == pytest.approx(pr.objective(rep.x, rep.y))
