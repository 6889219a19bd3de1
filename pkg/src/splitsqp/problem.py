"""Two-block problem data, the slack reformulation and the augmented Lagrangian.

The user-facing problem is

    min  f(x) + theta(y)
    s.t. A x + B y = b,   r <= C x + D y <= s,
         l <= x <= u,     p <= y <= q,

and every solver works on the equality-plus-box form obtained by the slack
``z = C x + D y``:

    min  f(x) + theta(y)
    s.t. E x + F y + G z = c,  x, y, z in boxes,

with ``E = [A; C]``, ``F = [B; D]``, ``G = [0; -I]`` and ``c = [b; 0]``.
Infinite bounds are plain ``numpy.inf`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .objectives import CallbackObjective, Objective, objective_from_dict

PROBLEM_DOC_VERSION = 1


class ProblemDimensionError(ValueError):
    """Raised when the blocks of a problem have inconsistent shapes."""


class EvaluationError(ArithmeticError):
    """Raised when an objective callback returns a non-finite value."""


def _frozen(a, ndim):
    a = np.array(a, dtype=float, copy=True)
    if ndim == 1:
        a = a.reshape(-1)
    elif a.ndim != 2:
        a = np.atleast_2d(a) if a.size else a.reshape(0, 0)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TwoBlockProblem:
    """Two-block problem with linear equality, band and box constraints.

    Matrices are dense; vectors may contain ``±inf`` in the box bounds.
    Use :meth:`from_objectives` to attach serializable objective families.
    """

    f_eval: Callable
    f_grad: Callable
    f_hess: Callable
    theta_eval: Callable
    theta_grad: Callable
    theta_hess: Callable
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    r: np.ndarray
    s: np.ndarray
    l: np.ndarray
    u: np.ndarray
    p: np.ndarray
    q: np.ndarray
    f_obj: Optional[Objective] = field(default=None, repr=False)
    theta_obj: Optional[Objective] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        for name in ("b", "r", "s", "l", "u", "p", "q"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 1))
        self._check_dimensions()

    @classmethod
    def from_objectives(cls, f, theta, A, B, C, D, b, r, s, l, u, p, q):
        return cls(f.value, f.grad, f.hess, theta.value, theta.grad, theta.hess,
                   A, B, C, D, b, r, s, l, u, p, q, f_obj=f, theta_obj=theta)

    @property
    def n1(self):
        return self.l.size

    @property
    def n2(self):
        return self.p.size

    @property
    def m1(self):
        return self.b.size

    @property
    def m2(self):
        return self.r.size

    def _check_dimensions(self):
        n1, n2, m1, m2 = self.n1, self.n2, self.m1, self.m2
        expect = {"A": (m1, n1), "B": (m1, n2), "C": (m2, n1), "D": (m2, n2)}
        for name, shape in expect.items():
            got = getattr(self, name).shape
            # empty blocks may arrive as (0, 0); accept them when one side is 0
            if got != shape and not (0 in shape and 0 in got and np.prod(got) == 0):
                raise ProblemDimensionError(f"block {name} has shape {got}, expected {shape}")
            if got != shape:
                object.__setattr__(self, name, _frozen(np.zeros(shape), 2))
        pairs = (("u", "l", n1), ("s", "r", m2), ("q", "p", n2))
        for hi, lo, n in pairs:
            if getattr(self, hi).size != n:
                raise ProblemDimensionError(
                    f"bound {hi} has length {getattr(self, hi).size}, expected {n}")
            if not np.all(getattr(self, lo) < getattr(self, hi)):
                raise ValueError(f"bounds must satisfy {lo} < {hi} componentwise")
        for name in ("A", "B", "C", "D", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if np.any(np.isnan(self.r)) or np.any(np.isnan(self.s)):
            raise ValueError("band bounds r, s must not be NaN")
        if self.f_obj is not None and self.f_obj.dim != n1:
            raise ProblemDimensionError(f"f has dimension {self.f_obj.dim}, expected {n1}")
        if self.theta_obj is not None and self.theta_obj.dim != n2:
            raise ProblemDimensionError(f"theta has dimension {self.theta_obj.dim}, expected {n2}")

    def objective(self, x, y):
        return _checked(self.f_eval(x), "f") + _checked(self.theta_eval(y), "theta")


def _checked(val, name):
    val = float(val)
    if not math.isfinite(val):
        raise EvaluationError(f"{name} returned a non-finite value ({val})")
    return val


@dataclass(frozen=True, eq=False)
class ReformulatedProblem:
    """Equality-plus-box form consumed by every solver loop."""

    problem: TwoBlockProblem
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    c: np.ndarray

    @property
    def x_bounds(self):
        return self.problem.l, self.problem.u

    @property
    def y_bounds(self):
        return self.problem.p, self.problem.q

    @property
    def z_bounds(self):
        return self.problem.r, self.problem.s

    @property
    def m1(self):
        return self.problem.m1

    @cached_property
    def EtE(self):
        return self.E.T @ self.E

    @cached_property
    def FtF(self):
        return self.F.T @ self.F

    def residual(self, x, y, z):
        # G z = [0; -z], applied without forming the product
        res = self.E @ x + self.F @ y - self.c
        res[self.m1:] -= z
        return res

    def G_T(self, v):
        return -v[self.m1:]


def reformulate(problem: TwoBlockProblem) -> ReformulatedProblem:
    """Stack the constraint blocks into ``E, F, G, c``."""
    m1, m2 = problem.m1, problem.m2
    E = np.vstack([problem.A, problem.C])
    F = np.vstack([problem.B, problem.D])
    G = np.vstack([np.zeros((m1, m2)), -np.eye(m2)])
    c = np.concatenate([problem.b, np.zeros(m2)])
    for a in (E, F, G, c):
        a.setflags(write=False)
    return ReformulatedProblem(problem, E, F, G, c)


@dataclass(frozen=True)
class Iterate:
    """Primal-dual state ``(x, y, z, lambda)``; ``lambda`` stacks equality then band parts."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    k: int = 0

    def lam_eq(self, m1):
        return self.lam[:m1]

    def lam_ineq(self, m1):
        return self.lam[m1:]

    @property
    def u(self):
        return np.concatenate([self.x, self.y, self.z])

    def with_primal(self, x, y, z):
        return replace(self, x=x, y=y, z=z)


def make_iterate(rp, x, y, z, lam=None, k=0):
    """Build an iterate, defaulting the multiplier to all ones."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    m = rp.c.size
    lam = np.ones(m) if lam is None else np.asarray(lam, dtype=float).reshape(-1)
    pr = rp.problem
    if x.size != pr.n1 or y.size != pr.n2 or z.size != pr.m2 or lam.size != m:
        raise ProblemDimensionError(
            f"iterate sizes (x={x.size}, y={y.size}, z={z.size}, lam={lam.size}) "
            f"do not match problem ({pr.n1}, {pr.n2}, {pr.m2}, {m})")
    return Iterate(x, y, z, lam, k)


def is_box_feasible(rp, w, atol=0.0):
    """Whether ``w`` satisfies all three boxes (up to ``atol``)."""
    pr = rp.problem
    checks = ((w.x, pr.l, pr.u), (w.y, pr.p, pr.q), (w.z, pr.r, pr.s))
    return all(np.all(v >= lo - atol) and np.all(v <= hi + atol) for v, lo, hi in checks)


def feasibility_residual(rp: ReformulatedProblem, w: Iterate):
    """Return ``E x + F y + G z - c`` and its infinity norm."""
    res = rp.residual(w.x, w.y, w.z)
    return res, float(np.max(np.abs(res), initial=0.0))


def aug_lagrangian(rp: ReformulatedProblem, w: Iterate, beta: float) -> float:
    """Merit ``f + theta - lam'res + beta/2 |res|^2``."""
    res = rp.residual(w.x, w.y, w.z)
    return rp.problem.objective(w.x, w.y) - float(w.lam @ res) + 0.5 * beta * float(res @ res)


def aug_lagrangian_completed_square(rp, w, beta):
    """Same merit written as ``f + theta + beta/2 |res - lam/beta|^2 - |lam|^2/(2 beta)``."""
    shifted = rp.residual(w.x, w.y, w.z) - w.lam / beta
    return (rp.problem.objective(w.x, w.y) + 0.5 * beta * float(shifted @ shifted)
            - float(w.lam @ w.lam) / (2.0 * beta))


def aug_lagrangian_grad(rp: ReformulatedProblem, w: Iterate, beta: float):
    """Block gradients ``(g_x, g_y, g_z)`` of the merit in the primal variables."""
    res = rp.residual(w.x, w.y, w.z)
    mult = w.lam - beta * res
    pr = rp.problem
    g_x = np.asarray(pr.f_grad(w.x), dtype=float) - rp.E.T @ mult
    g_y = np.asarray(pr.theta_grad(w.y), dtype=float) - rp.F.T @ mult
    g_z = -rp.G_T(mult)
    return g_x, g_y, g_z


HESSIAN_MODES = ("exact", "user", "identity-shift")


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the splitting loop and its baseline.

    Defaults are the economic-dispatch settings ``rho = sigma = 0.8``,
    ``beta = 2000``, ``xi = 0.001`` and the ``|d|_inf <= 0.005`` stop.
    ``tol_feas=None`` resolves to ``1e-4 * (1 + |c|_inf)``.
    """

    rho: float = 0.8
    sigma: float = 0.8
    beta: float = 2000.0
    xi: float = 0.001
    tol_direction: float = 0.005
    tol_feas: Optional[float] = None
    max_iter: int = 500
    max_backtracks: int = 60
    hessian_mode: str = "exact"
    eta: float = 1e-6
    max_dual_only: int = 50
    qp_tol: float = 1e-10
    parallel_subproblems: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")
        for name in ("beta", "xi", "tol_direction", "eta", "qp_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.tol_feas is not None and not self.tol_feas > 0.0:
            raise ValueError(f"tol_feas must be positive, got {self.tol_feas}")
        if self.max_iter < 0 or self.max_backtracks < 0 or self.max_dual_only < 1:
            raise ValueError("iteration budgets must be non-negative")
        if self.hessian_mode not in HESSIAN_MODES:
            raise ValueError(f"hessian_mode must be one of {HESSIAN_MODES}")

    def feas_tolerance(self, rp):
        if self.tol_feas is not None:
            return self.tol_feas
        return 1e-4 * (1.0 + float(np.max(np.abs(rp.c), initial=0.0)))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- problem documents -------------------------------------------------------

def _enc_bound(v):
    return [("inf" if x > 0 else "-inf") if np.isinf(x) else float(x) for x in v]


def _dec_bound(v):
    return np.array([float(x) for x in v], dtype=float)


def problem_to_dict(problem: TwoBlockProblem) -> dict:
    """Versioned JSON-ready document; needs serializable objective families."""
    if problem.f_obj is None or problem.theta_obj is None:
        raise TypeError("problem uses custom callbacks and cannot be serialized")
    doc = {"version": PROBLEM_DOC_VERSION, "kind": "two-block",
           "f": problem.f_obj.to_dict(), "theta": problem.theta_obj.to_dict(),
           "dims": {"n1": problem.n1, "n2": problem.n2, "m1": problem.m1, "m2": problem.m2}}
    for name in ("A", "B", "C", "D"):
        doc[name] = getattr(problem, name).tolist()
    doc["b"] = problem.b.tolist()
    for name in ("r", "s", "l", "u", "p", "q"):
        doc[name] = _enc_bound(getattr(problem, name))
    return doc


def problem_from_dict(doc: dict) -> TwoBlockProblem:
    if doc.get("version") != PROBLEM_DOC_VERSION:
        raise ValueError(f"unsupported problem document version {doc.get('version')!r}")
    dims = doc["dims"]
    mats = {}
    for name, (rows, cols) in {"A": ("m1", "n1"), "B": ("m1", "n2"),
                               "C": ("m2", "n1"), "D": ("m2", "n2")}.items():
        mats[name] = np.array(doc[name], dtype=float).reshape(dims[rows], dims[cols])
    bounds = {name: _dec_bound(doc[name]) for name in ("r", "s", "l", "u", "p", "q")}
    return TwoBlockProblem.from_objectives(
        objective_from_dict(doc["f"]), objective_from_dict(doc["theta"]),
        b=np.array(doc["b"], dtype=float), **mats, **bounds)


def problem_from_callbacks(f_eval, f_grad, f_hess, theta_eval, theta_grad, theta_hess, **data):
    """Convenience constructor that keeps the callbacks wrapped as objectives."""
    n1 = np.asarray(data["l"]).size
    n2 = np.asarray(data["p"]).size
    f = CallbackObjective(n1, f_eval, f_grad, f_hess)
    th = CallbackObjective(n2, theta_eval, theta_grad, theta_hess)
    return TwoBlockProblem(f.value, f.grad, f.hess, th.value, th.grad, th.hess, **data)
