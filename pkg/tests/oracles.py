"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np


def enumerate_box_qp(H, g, lower, upper):
    """Exhaustive active-set oracle: try every lower/free/upper pattern.

    For each pattern the free block is solved from the reduced stationarity
    system; the pattern is kept when the point is feasible and the bound
    multipliers have the right sign. Among survivors the smallest objective wins.
    """
    n = g.size
    best, best_val = None, np.inf
    for pattern in itertools.product((-1, 0, 1), repeat=n):
        pat = np.array(pattern)
        if np.any((pat == -1) & ~np.isfinite(lower)) or np.any((pat == 1) & ~np.isfinite(upper)):
            continue
        v = np.zeros(n)
        v[pat == -1] = lower[pat == -1]
        v[pat == 1] = upper[pat == 1]
        free = pat == 0
        if free.any():
            fixed = ~free
            rhs = -g[free] - H[np.ix_(free, fixed)] @ v[fixed]
            v[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        if np.any(v < lower - 1e-12) or np.any(v > upper + 1e-12):
            continue
        grad = H @ v + g
        if np.any(grad[pat == -1] < -1e-10) or np.any(grad[pat == 1] > 1e-10):
            continue
        val = g @ v + 0.5 * v @ H @ v
        if val < best_val:
            best, best_val = v, val
    return best


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * eig) @ Q.T


def central_difference(fun, v, h=1e-6):
    g = np.zeros_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (fun(v + e) - fun(v - e)) / (2 * h)
    return g


def random_two_block(rng, n1, n2, m1, m2, convex=True, box=2.0):
    """Random two-block problem with quadratic or cubic blocks.

    ``convex=False`` draws an indefinite quadratic ``f`` and a separable cubic
    ``theta`` with negative curvature somewhere on the box.
    """
    from splitsqp import CubicSeparableObjective, QuadraticObjective, TwoBlockProblem

    if convex:
        f = QuadraticObjective(random_spd(rng, n1), rng.standard_normal(n1))
        theta = QuadraticObjective(random_spd(rng, n2), rng.standard_normal(n2))
    else:
        S = rng.standard_normal((n1, n1))
        f = QuadraticObjective(0.5 * (S + S.T), rng.standard_normal(n1))
        theta = CubicSeparableObjective(rng.uniform(-0.5, 0.5, n2), rng.uniform(-0.5, 1.0, n2),
                                        rng.standard_normal(n2))
    A, B = rng.standard_normal((m1, n1)), rng.standard_normal((m1, n2))
    C, D = rng.standard_normal((m2, n1)), rng.standard_normal((m2, n2))
    x0, y0 = rng.uniform(-box / 2, box / 2, n1), rng.uniform(-box / 2, box / 2, n2)
    b = A @ x0 + B @ y0
    mid = C @ x0 + D @ y0
    r, s = mid - rng.uniform(0.1, 1.0, m2), mid + rng.uniform(0.1, 1.0, m2)
    return TwoBlockProblem.from_objectives(
        f, theta, A, B, C, D, b, r, s,
        np.full(n1, -box), np.full(n1, box), np.full(n2, -box), np.full(n2, box))


def residual(pr, x, y, z):
    return np.concatenate([pr.A @ x + pr.B @ y - pr.b, pr.C @ x + pr.D @ y - z])


def merit(pr, x, y, z, lam, beta):
    res = residual(pr, x, y, z)
    return pr.f_eval(x) + pr.theta_eval(y) - lam @ res + 0.5 * beta * res @ res


def merit_grad(pr, x, y, z, lam, beta):
    """Gradient of the merit in ``(x, y, z)``, from the constraint matrices directly."""
    m1 = pr.b.size
    v = beta * residual(pr, x, y, z) - lam
    gx = pr.f_grad(x) + pr.A.T @ v[:m1] + pr.C.T @ v[m1:]
    gy = pr.theta_grad(y) + pr.B.T @ v[:m1] + pr.D.T @ v[m1:]
    gz = -v[m1:]
    return np.concatenate([gx, gy, gz])


def shifted_pd(H, floor=0.1):
    """``H + tau I`` with the smallest eigenvalue lifted to at least ``floor``."""
    H = 0.5 * (H + H.T)
    lo = float(np.linalg.eigvalsh(H)[0]) if H.size else floor
    return H + max(0.0, floor - lo) * np.eye(H.shape[0])


def projected_gradient_reference(pr, lam, beta, x, y, z, max_iter=400000, tol=1e-14):
    """Projected gradient on the merit at fixed ``lam`` over the product box.

    The step is ``1/L`` with ``L`` the largest eigenvalue of the (constant)
    Hessian of a quadratic merit; iterations stop when the step falls below ``tol``.
    """
    n1, n2 = x.size, y.size
    m1 = pr.b.size
    M = np.block([[pr.A, pr.B, np.zeros((m1, z.size))],
                  [pr.C, pr.D, -np.eye(z.size)]])
    Hf = np.zeros((n1 + n2 + z.size,) * 2)
    Hf[:n1, :n1] = pr.f_hess(x)
    Hf[n1:n1 + n2, n1:n1 + n2] = pr.theta_hess(y)
    L = float(np.linalg.eigvalsh(Hf + beta * M.T @ M)[-1])
    lo = np.concatenate([pr.l, pr.p, pr.r])
    hi = np.concatenate([pr.u, pr.q, pr.s])
    u = np.concatenate([x, y, z])
    for _ in range(max_iter):
        g = merit_grad(pr, u[:n1], u[n1:n1 + n2], u[n1 + n2:], lam, beta)
        nu = np.clip(u - g / L, lo, hi)
        if np.max(np.abs(nu - u)) < tol:
            u = nu
            break
        u = nu
    return u[:n1], u[n1:n1 + n2], u[n1 + n2:]


def kkt_instance(rng, n1=None, n2=None, m1=None, m2=None, active=False):
    """Convex QP two-block problem with a known KKT point.

    Returns ``(problem, lam_star, x_star, y_star, z_star)``. With
    ``active=True`` some box and band constraints are active at the
    solution with strictly positive multipliers.
    """
    from splitsqp import QuadraticObjective, TwoBlockProblem

    n1 = int(rng.integers(2, 9)) if n1 is None else n1
    n2 = int(rng.integers(2, 9)) if n2 is None else n2
    m1 = int(rng.integers(1, 4)) if m1 is None else m1
    m2 = int(rng.integers(1, 4)) if m2 is None else m2
    Q, R = random_spd(rng, n1), random_spd(rng, n2)
    A, B = rng.standard_normal((m1, n1)), rng.standard_normal((m1, n2))
    C, D = rng.standard_normal((m2, n1)), rng.standard_normal((m2, n2))
    l, u, p, q = np.full(n1, -2.0), np.full(n1, 2.0), np.full(n2, -2.0), np.full(n2, 2.0)
    xs, ys = rng.uniform(-1, 1, n1), rng.uniform(-1, 1, n2)
    gx, gy = np.zeros(n1), np.zeros(n2)
    lam_eq = rng.standard_normal(m1)
    zs = C @ xs + D @ ys
    r, s = zs - rng.uniform(0.1, 1.0, m2), zs + rng.uniform(0.1, 1.0, m2)
    lam_in = np.zeros(m2)
    if active:
        # x_1 at its lower bound, y_1 at its upper bound, band row 1 at r
        xs[0], ys[0] = l[0], q[0]
        gx[0], gy[0] = -rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)
        zs = C @ xs + D @ ys
        r, s = zs - rng.uniform(0.1, 1.0, m2), zs + rng.uniform(0.1, 1.0, m2)
        r[0] = zs[0]
        lam_in[0] = rng.uniform(0.5, 2.0)
    # stationarity: grad f = A'lam_eq + C'lam_in + alpha_x - gamma_x, likewise for theta
    f = QuadraticObjective(Q, -Q @ xs + A.T @ lam_eq + C.T @ lam_in - gx)
    theta = QuadraticObjective(R, -R @ ys + B.T @ lam_eq + D.T @ lam_in - gy)
    pr = TwoBlockProblem.from_objectives(f, theta, A, B, C, D, A @ xs + B @ ys, r, s, l, u, p, q)
    return pr, np.concatenate([lam_eq, lam_in]), xs, ys, zs


def independent_kkt(pr, x, y, z, lam, alpha_x, gamma_x, alpha_y, gamma_y, alpha_z, gamma_z):
    """Slack-form KKT residual written out line by line from the problem data."""
    m1 = pr.b.size
    le, li = lam[:m1], lam[m1:]
    terms = [
        pr.f_grad(x) - pr.A.T @ le - pr.C.T @ li - alpha_x + gamma_x,
        pr.theta_grad(y) - pr.B.T @ le - pr.D.T @ li - alpha_y + gamma_y,
        li - alpha_z + gamma_z,
        np.minimum(np.concatenate([alpha_x, gamma_x, alpha_y, gamma_y, alpha_z, gamma_z]), 0.0),
        residual(pr, x, y, z),
    ]
    for mult, slack in ((alpha_x, x - pr.l), (gamma_x, pr.u - x), (alpha_y, y - pr.p),
                        (gamma_y, pr.q - y), (alpha_z, z - pr.r), (gamma_z, pr.s - z)):
        terms.append(np.where(mult == 0, 0.0, mult * slack))
        terms.append(np.minimum(np.where(np.isinf(slack), 0.0, slack), 0.0))
    return max(float(np.max(np.abs(t), initial=0.0)) for t in terms)


def independent_kkt_original(pr, x, y, lam_eq, alpha_x, gamma_x, alpha_y, gamma_y, mu_r, mu_s):
    """Original-form KKT residual; ``mu_r``/``mu_s`` belong to ``r <= Cx+Dy`` / ``Cx+Dy <= s``."""
    band = pr.C @ x + pr.D @ y
    terms = [
        pr.f_grad(x) - pr.A.T @ lam_eq - pr.C.T @ (mu_r - mu_s) - alpha_x + gamma_x,
        pr.theta_grad(y) - pr.B.T @ lam_eq - pr.D.T @ (mu_r - mu_s) - alpha_y + gamma_y,
        np.minimum(np.concatenate([alpha_x, gamma_x, alpha_y, gamma_y, mu_r, mu_s]), 0.0),
        pr.A @ x + pr.B @ y - pr.b,
        np.maximum(pr.r - band, 0.0), np.maximum(band - pr.s, 0.0),
        mu_r * (band - pr.r), mu_s * (pr.s - band),
        alpha_x * (x - pr.l), gamma_x * (pr.u - x), alpha_y * (y - pr.p), gamma_y * (pr.q - y),
    ]
    return max(float(np.max(np.abs(t), initial=0.0)) for t in terms)

