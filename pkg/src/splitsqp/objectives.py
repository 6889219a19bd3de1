"""Smooth objective families with value, gradient and Hessian callbacks.

Only the families defined here can be written to a problem document; any
other callable triple is accepted by :class:`~splitsqp.problem.TwoBlockProblem`
but is tagged ``custom`` and refuses serialization.
"""

from __future__ import annotations

import numpy as np


class Objective:
    """Base class for a smooth function ``R^n -> R``."""

    family = "custom"

    def __init__(self, dim):
        self.dim = int(dim)

    def value(self, v):
        raise NotImplementedError

    def grad(self, v):
        raise NotImplementedError

    def hess(self, v):
        raise NotImplementedError

    def to_dict(self):
        raise TypeError(f"objective family '{self.family}' is not serializable")


class QuadraticObjective(Objective):
    """``0.5 v'Qv + q'v + const`` with symmetric ``Q`` (may be indefinite)."""

    family = "quadratic"

    def __init__(self, Q, q, const=0.0):
        q = np.asarray(q, dtype=float).reshape(-1)
        Q = np.asarray(Q, dtype=float)
        if Q.size != q.size ** 2 or (Q.ndim == 2 and Q.shape != (q.size, q.size)):
            raise ValueError(f"Q has shape {Q.shape}, expected {(q.size, q.size)}")
        Q = Q.reshape(q.size, q.size)
        super().__init__(q.size)
        self.Q = 0.5 * (Q + Q.T)
        self.q = q
        self.const = float(const)

    def value(self, v):
        return float(0.5 * v @ (self.Q @ v) + self.q @ v + self.const)

    def grad(self, v):
        return self.Q @ v + self.q

    def hess(self, v):
        return self.Q.copy()

    def to_dict(self):
        return {"family": self.family, "Q": self.Q.tolist(),
                "q": self.q.tolist(), "const": self.const}


class CubicSeparableObjective(Objective):
    """Separable cubic ``sum_i a_i v_i^3 + b_i v_i^2 + c_i v_i + d_i``.

    This is the generator cost model of economic dispatch; with ``a_i < 0``
    it also serves as a cheap nonconvex test family.
    """

    family = "cubic-separable"

    def __init__(self, a, b, c, d=None):
        a = np.asarray(a, dtype=float).reshape(-1)
        super().__init__(a.size)
        self.a = a
        self.b = np.broadcast_to(np.asarray(b, dtype=float), a.shape).copy()
        self.c = np.broadcast_to(np.asarray(c, dtype=float), a.shape).copy()
        d = 0.0 if d is None else d
        self.d = np.broadcast_to(np.asarray(d, dtype=float), a.shape).copy()

    def value(self, v):
        return float(np.sum(((self.a * v + self.b) * v + self.c) * v + self.d))

    def grad(self, v):
        return (3.0 * self.a * v + 2.0 * self.b) * v + self.c

    def hess_diag(self, v):
        return 6.0 * self.a * v + 2.0 * self.b

    def hess(self, v):
        return np.diag(self.hess_diag(v))

    def to_dict(self):
        return {"family": self.family, "a": self.a.tolist(), "b": self.b.tolist(),
                "c": self.c.tolist(), "d": self.d.tolist()}


class CallbackObjective(Objective):
    """Wraps user callbacks; usable by the solvers, not serializable."""

    def __init__(self, dim, value, grad, hess):
        super().__init__(dim)
        self._value, self._grad, self._hess = value, grad, hess

    def value(self, v):
        return float(self._value(v))

    def grad(self, v):
        return np.asarray(self._grad(v), dtype=float)

    def hess(self, v):
        return np.asarray(self._hess(v), dtype=float).reshape(self.dim, self.dim)


_FAMILIES = {
    "quadratic": lambda doc: QuadraticObjective(doc["Q"], doc["q"], doc.get("const", 0.0)),
    "cubic-separable": lambda doc: CubicSeparableObjective(doc["a"], doc["b"], doc["c"], doc.get("d")),
}


def objective_from_dict(doc):
    family = doc.get("family")
    if family not in _FAMILIES:
        raise ValueError(f"unknown or unserializable objective family: {family!r}")
    return _FAMILIES[family](doc)
