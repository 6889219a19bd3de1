"""Solve reports: per-iteration traces, terminal certificates, JSON and CSV output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .kkt import Multipliers, ResidualBreakdown

REPORT_VERSION = 1
CONVERGED = "converged"
CSV_COLUMNS = ("iter", "F_c(P*)", "phi_eq", "C_t")


@dataclass
class IterationTrace:
    """One accepted iteration.

    ``merit_after`` is the merit at the new primal point with the old
    multiplier, ``merit_next`` the merit after the dual update.
    """

    k: int
    merit_before: float
    merit_after: float
    merit_next: float
    step_size: float
    backtracks: int
    d_norm_inf: float
    quad_norm: float
    directional_derivative: float
    feasibility: float
    res_sq_next: float
    dual_update_norm: float
    inner_iterations: tuple
    wall_time: float
    hessian_shift: tuple = (0.0, 0.0)
    dual_only: bool = False
    direction: Optional[object] = field(default=None, repr=False, compare=False)

    def to_dict(self):
        doc = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "direction"}
        doc["inner_iterations"] = list(self.inner_iterations)
        doc["hessian_shift"] = list(self.hessian_shift)
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["inner_iterations"] = tuple(doc["inner_iterations"])
        doc["hessian_shift"] = tuple(doc["hessian_shift"])
        return cls(**doc)


@dataclass(eq=False)
class SolveReport:
    algorithm: str
    status: str
    message: str
    iterations: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    multipliers: Multipliers
    objective: float
    phi_eq: float
    d_norm_inf: float
    wall_time: float
    kkt: ResidualBreakdown
    kkt_original: ResidualBreakdown
    kkt_tolerance: float
    trace: list
    config: dict
    problem_doc: Optional[dict] = None

    @property
    def converged(self):
        return self.status == CONVERGED

    def csv_row(self):
        return {"iter": self.iterations, "F_c(P*)": self.objective,
                "phi_eq": self.phi_eq, "C_t": self.wall_time}

    def to_dict(self):
        return {
            "version": REPORT_VERSION,
            "algorithm": self.algorithm,
            "status": self.status,
            "message": self.message,
            "iterations": self.iterations,
            "solution": {"x": self.x.tolist(), "y": self.y.tolist(),
                         "z": self.z.tolist(), "lam": self.lam.tolist()},
            "multipliers": self.multipliers.to_dict(),
            "objective": self.objective,
            "phi_eq": self.phi_eq,
            "d_norm_inf": self.d_norm_inf,
            "wall_time": self.wall_time,
            "kkt": self.kkt.to_dict(),
            "kkt_original": self.kkt_original.to_dict(),
            "kkt_tolerance": self.kkt_tolerance,
            "config": self.config,
            "problem": self.problem_doc,
            "trace": [t.to_dict() for t in self.trace],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {doc.get('version')!r}")
        sol = doc["solution"]
        return cls(
            algorithm=doc["algorithm"], status=doc["status"], message=doc["message"],
            iterations=int(doc["iterations"]),
            x=np.asarray(sol["x"], dtype=float), y=np.asarray(sol["y"], dtype=float),
            z=np.asarray(sol["z"], dtype=float), lam=np.asarray(sol["lam"], dtype=float),
            multipliers=Multipliers.from_dict(doc["multipliers"]),
            objective=float(doc["objective"]), phi_eq=float(doc["phi_eq"]),
            d_norm_inf=float(doc["d_norm_inf"]), wall_time=float(doc["wall_time"]),
            kkt=ResidualBreakdown.from_dict(doc["kkt"]),
            kkt_original=ResidualBreakdown.from_dict(doc["kkt_original"]),
            kkt_tolerance=float(doc["kkt_tolerance"]),
            trace=[IterationTrace.from_dict(t) for t in doc["trace"]],
            config=dict(doc["config"]), problem_doc=doc.get("problem"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def load_report(path) -> SolveReport:
    with open(path) as fh:
        return SolveReport.from_dict(json.load(fh))
