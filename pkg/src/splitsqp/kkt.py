"""First-order optimality certificates.

Residuals are reported line by line so a failing certificate says which
condition broke. Two forms are supported: the slack form (multiplier
``lam`` on ``E x + F y + G z = c`` plus bound multipliers for x, y, z) and
the original form, where the band multipliers act on ``C x + D y`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

_NORM0 = {"initial": 0.0}


def _inf_norm(v):
    return float(np.max(np.abs(v), **_NORM0))


@dataclass(frozen=True, eq=False)
class Multipliers:
    """Multipliers of the slack form: ``lam`` then lower/upper pairs for x, y, z."""

    lam: np.ndarray
    alpha_x: np.ndarray
    gamma_x: np.ndarray
    alpha_y: np.ndarray
    gamma_y: np.ndarray
    alpha_z: np.ndarray
    gamma_z: np.ndarray

    def bound_norm(self):
        return max(_inf_norm(getattr(self, f.name)) for f in fields(self) if f.name != "lam")

    def to_dict(self):
        return {f.name: getattr(self, f.name).tolist() for f in fields(self)}

    @classmethod
    def from_dict(cls, doc):
        return cls(**{f.name: np.asarray(doc[f.name], dtype=float) for f in fields(cls)})


@dataclass(frozen=True, eq=False)
class OriginalMultipliers:
    """Multipliers of the original problem; ``alpha_z``/``gamma_z`` act on ``C x + D y``."""

    lam_eq: np.ndarray
    alpha_x: np.ndarray
    gamma_x: np.ndarray
    alpha_y: np.ndarray
    gamma_y: np.ndarray
    alpha_z: np.ndarray
    gamma_z: np.ndarray


@dataclass(frozen=True)
class ResidualBreakdown:
    stationarity_x: float
    stationarity_y: float
    stationarity_z: float
    sign: float
    complementarity: float
    feasibility: float

    @property
    def total(self):
        return max(self.stationarity_x, self.stationarity_y, self.stationarity_z,
                   self.sign, self.complementarity, self.feasibility)

    def to_dict(self):
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["total"] = self.total
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(**{f.name: float(doc[f.name]) for f in fields(cls)})


def _complementarity(mult, slack):
    # a zero multiplier against an infinite slack is exact complementarity
    with np.errstate(invalid="ignore"):
        prod = np.where(mult == 0.0, 0.0, mult * slack)
    return _inf_norm(prod)


def _bound_terms(pairs):
    sign = 0.0
    comp = 0.0
    for mult, slack in pairs:
        sign = max(sign, _inf_norm(np.minimum(mult, 0.0)))
        comp = max(comp, _complementarity(mult, slack))
    return sign, comp


def kkt_residual_reformulated(rp, x, y, z, mult: Multipliers) -> ResidualBreakdown:
    """Infinity-norm residual of each line of the slack-form KKT system.

    Primal box violations are folded into ``feasibility`` together with
    ``|E x + F y + G z - c|_inf``.
    """
    pr = rp.problem
    lam = mult.lam
    st_x = np.asarray(pr.f_grad(x), dtype=float) - rp.E.T @ lam - mult.alpha_x + mult.gamma_x
    st_y = np.asarray(pr.theta_grad(y), dtype=float) - rp.F.T @ lam - mult.alpha_y + mult.gamma_y
    st_z = -rp.G.T @ lam - mult.alpha_z + mult.gamma_z
    sign, comp = _bound_terms([
        (mult.alpha_x, x - pr.l), (mult.gamma_x, pr.u - x),
        (mult.alpha_y, y - pr.p), (mult.gamma_y, pr.q - y),
        (mult.alpha_z, z - pr.r), (mult.gamma_z, pr.s - z),
    ])
    box = max(_inf_norm(np.maximum(pr.l - x, 0.0)), _inf_norm(np.maximum(x - pr.u, 0.0)),
              _inf_norm(np.maximum(pr.p - y, 0.0)), _inf_norm(np.maximum(y - pr.q, 0.0)),
              _inf_norm(np.maximum(pr.r - z, 0.0)), _inf_norm(np.maximum(z - pr.s, 0.0)))
    feas = max(_inf_norm(rp.residual(x, y, z)), box)
    return ResidualBreakdown(_inf_norm(st_x), _inf_norm(st_y), _inf_norm(st_z), sign, comp, feas)


def map_multipliers_to_original(mult: Multipliers, m1: int) -> OriginalMultipliers:
    """Drop the band part of ``lam``; the z-bound multipliers carry over unchanged.

    The slack stationarity line ``lam_ineq - alpha_z + gamma_z = 0`` is what
    makes ``C' lam_ineq`` equal ``C'(alpha_z - gamma_z)`` in the original form.
    """
    return OriginalMultipliers(mult.lam[:m1], mult.alpha_x, mult.gamma_x,
                               mult.alpha_y, mult.gamma_y, mult.alpha_z, mult.gamma_z)


def kkt_residual_original(problem, x, y, mult: OriginalMultipliers) -> ResidualBreakdown:
    """Residual of the original-problem KKT system (no slack variable).

    ``stationarity_z`` is always 0 here; band violations of ``C x + D y``
    count toward ``feasibility``.
    """
    band = problem.C @ x + problem.D @ y
    band_mult = mult.gamma_z - mult.alpha_z
    st_x = (np.asarray(problem.f_grad(x), dtype=float) - problem.A.T @ mult.lam_eq
            + problem.C.T @ band_mult + mult.gamma_x - mult.alpha_x)
    st_y = (np.asarray(problem.theta_grad(y), dtype=float) - problem.B.T @ mult.lam_eq
            + problem.D.T @ band_mult + mult.gamma_y - mult.alpha_y)
    sign, comp = _bound_terms([
        (mult.alpha_x, x - problem.l), (mult.gamma_x, problem.u - x),
        (mult.alpha_y, y - problem.p), (mult.gamma_y, problem.q - y),
        (mult.alpha_z, band - problem.r), (mult.gamma_z, problem.s - band),
    ])
    feas = max(_inf_norm(problem.A @ x + problem.B @ y - problem.b),
               _inf_norm(np.maximum(problem.r - band, 0.0)),
               _inf_norm(np.maximum(band - problem.s, 0.0)),
               _inf_norm(np.maximum(problem.l - x, 0.0)), _inf_norm(np.maximum(x - problem.u, 0.0)),
               _inf_norm(np.maximum(problem.p - y, 0.0)), _inf_norm(np.maximum(y - problem.q, 0.0)))
    return ResidualBreakdown(_inf_norm(st_x), _inf_norm(st_y), 0.0, sign, comp, feas)


@dataclass(frozen=True)
class GradientCheck:
    f_error: float
    theta_error: float
    threshold: float

    @property
    def flagged(self):
        return [name for name, err in (("f", self.f_error), ("theta", self.theta_error))
                if not err <= self.threshold]

    @property
    def ok(self):
        return not self.flagged


def _fd_error(fun, grad, v, h):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    g = np.asarray(grad(v), dtype=float)
    fd = np.empty_like(v)
    for i in range(v.size):
        step = h * max(1.0, abs(v[i]))
        e = np.zeros_like(v)
        e[i] = step
        fd[i] = (fun(v + e) - fun(v - e)) / (2.0 * step)
    return _inf_norm(fd - g) / max(1.0, _inf_norm(g))


def check_gradients(problem, x, y, h=1e-6, threshold=1e-4) -> GradientCheck:
    """Compare ``f_grad``/``theta_grad`` against central differences.

    The step for coordinate ``i`` is ``h * max(1, |v_i|)``. Errors are
    ``|fd - grad|_inf / max(1, |grad|_inf)``; values above ``threshold`` are flagged.
    """
    return GradientCheck(_fd_error(problem.f_eval, problem.f_grad, x, h),
                         _fd_error(problem.theta_eval, problem.theta_grad, y, h), threshold)


def descent_gap(grad_blocks, direction):
    """``grad' d + |d|^2_H``; the descent inequality asks for this to be <= 0."""
    g = np.concatenate(grad_blocks)
    return float(g @ direction.u) + direction.quad_norm


def merit_decrease_gap(trace, xi, rho):
    """Slack in the per-iteration merit inequality; should be <= 0 up to roundoff."""
    return (trace.merit_next - trace.merit_before + xi * trace.res_sq_next
            + trace.step_size * rho * trace.quad_norm)
