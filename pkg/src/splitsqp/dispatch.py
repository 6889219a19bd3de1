"""Multi-period economic dispatch with ramp limits as a two-block problem.

Unit outputs ``p[i, t]`` are split into two blocks: the first ``N // 2``
units form ``x``, the rest form ``y``, both stored unit-major
(``x[i*T + t]``). Power balance gives the equality rows, per-unit first
differences give the band rows

    -D_i <= p[i, t] - p[i, t-1] <= U_i,    p[i, 0] = p_initial,

and the output limits are the boxes. Costs are cubic in each output.

Instance data are in MW. The optimization variables are per-unit outputs
``p / power_base`` (default base 100 MW); objective values stay in cost units.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .objectives import CubicSeparableObjective
from .problem import SolverConfig, TwoBlockProblem

INSTANCE_VERSION = 1
DEFAULT_POWER_BASE = 100.0

# Unit counts per base unit for the replicated instances, in row order.
TABLE1_COUNTS = (
    (1, 2, 3, 2, 2), (3, 3, 3, 3, 3), (4, 4, 4, 4, 4), (5, 6, 7, 7, 5),
    (5, 10, 10, 5, 10), (8, 11, 12, 9, 10), (10, 14, 16, 15, 15), (13, 18, 18, 13, 18),
    (12, 20, 25, 20, 13), (18, 22, 25, 18, 17), (20, 24, 27, 20, 19), (22, 26, 29, 22, 21),
    (26, 30, 30, 22, 22), (30, 33, 32, 25, 30), (34, 37, 36, 29, 34), (36, 39, 38, 30, 37),
    (40, 44, 41, 34, 41), (44, 48, 45, 38, 45), (48, 52, 48, 40, 52), (50, 54, 50, 42, 54),
)


class InstanceError(ValueError):
    """Invalid dispatch data; the message names the offending field."""


@dataclass(frozen=True)
class UnitParams:
    """Generator data: cost ``a p^3 + b p^2 + c p + d`` and operating limits (MW)."""

    a: float
    b: float
    c: float
    d: float
    p_min: float
    p_max: float
    ramp_down: float
    ramp_up: float
    p_initial: float

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                raise InstanceError(f"unit field {f.name!r} must be a finite number, got {val!r}")
        if not 0.0 < self.p_min < self.p_max:
            raise InstanceError(f"need 0 < p_min < p_max, got p_min={self.p_min}, p_max={self.p_max}")
        if not (self.ramp_down > 0.0 and self.ramp_up > 0.0):
            raise InstanceError("ramp_down and ramp_up must be positive")
        # curvature 6 a p + 2 b must stay positive on [p_min, p_max]
        if min(6 * self.a * self.p_min, 6 * self.a * self.p_max) + 2 * self.b <= 0.0:
            raise InstanceError("cost curvature 6*a*p + 2*b must be positive on [p_min, p_max]")


@dataclass(frozen=True, eq=False)
class EDInstance:
    units: tuple
    T: int
    demand: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if not self.units:
            raise InstanceError("instance needs at least one unit")
        if int(self.T) != self.T or self.T < 1:
            raise InstanceError(f"T must be a positive integer, got {self.T!r}")
        demand = np.asarray(self.demand, dtype=float).reshape(-1)
        if demand.size != self.T:
            raise InstanceError(f"demand has length {demand.size}, expected T={self.T}")
        lo = sum(u.p_min for u in self.units)
        hi = sum(u.p_max for u in self.units)
        bad = np.flatnonzero((demand < lo) | (demand > hi))
        if bad.size:
            t = int(bad[0])
            raise InstanceError(f"demand[{t}]={demand[t]} outside [{lo}, {hi}] (sum of p_min, p_max)")
        demand.setflags(write=False)
        object.__setattr__(self, "demand", demand)

    @property
    def N(self):
        return len(self.units)

    @property
    def N1(self):
        return self.N // 2

    def unit_array(self, name):
        return np.array([getattr(u, name) for u in self.units], dtype=float)

    def __eq__(self, other):
        return (isinstance(other, EDInstance) and self.units == other.units
                and self.T == other.T and np.array_equal(self.demand, other.demand))

    def to_dict(self):
        return {"version": INSTANCE_VERSION, "T": int(self.T),
                "units": [asdict(u) for u in self.units], "demand": self.demand.tolist()}


# -- construction --------------------------------------------------------------

def _difference_block(T):
    # rows give p_t - p_{t-1}; the first row gives p_1
    return np.eye(T) - np.eye(T, k=-1)


def build_ed_problem(inst: EDInstance, power_base=DEFAULT_POWER_BASE) -> TwoBlockProblem:
    """Two-block problem with ``x`` the first ``N // 2`` units and ``y`` the rest.

    Variables are outputs divided by ``power_base``; pass ``power_base=1``
    to work directly in MW.
    """
    if not power_base > 0.0:
        raise InstanceError(f"power_base must be positive, got {power_base}")
    N, T, N1 = inst.N, inst.T, inst.N1
    N2 = N - N1
    S = float(power_base)
    first, second = inst.units[:N1], inst.units[N1:]

    def rep(name, units):
        return np.repeat(np.array([getattr(u, name) for u in units], dtype=float), T)

    A = np.tile(np.eye(T), (1, N1))
    B = np.tile(np.eye(T), (1, N2))
    delta = _difference_block(T)
    C = np.zeros((N * T, N1 * T))
    D = np.zeros((N * T, N2 * T))
    C[:N1 * T] = np.kron(np.eye(N1), delta)
    D[N1 * T:] = np.kron(np.eye(N2), delta)

    units = inst.units
    r = -rep("ramp_down", units)
    s = rep("ramp_up", units)
    p0 = np.array([u.p_initial for u in units])
    r[::T] += p0
    s[::T] += p0

    def cost(group):
        # one entry per (unit, period), so the constant d_i is charged every period
        return CubicSeparableObjective(rep("a", group) * S ** 3, rep("b", group) * S ** 2,
                                       rep("c", group) * S, rep("d", group))

    return TwoBlockProblem.from_objectives(
        cost(first), cost(second), A, B, C, D, np.array(inst.demand) / S, r / S, s / S,
        rep("p_min", first) / S, rep("p_max", first) / S,
        rep("p_min", second) / S, rep("p_max", second) / S)


def ed_cost(inst: EDInstance, schedule):
    """Total cost of a ``(N, T)`` output schedule by direct summation."""
    P = np.asarray(schedule, dtype=float).reshape(inst.N, inst.T)
    total = 0.0
    for i, u in enumerate(inst.units):
        for t in range(inst.T):
            p = P[i, t]
            total += u.a * p ** 3 + u.b * p ** 2 + u.c * p + u.d
    return total


def schedule_from_blocks(inst, x, y, power_base=DEFAULT_POWER_BASE):
    """``(N, T)`` schedule in MW from the solver blocks."""
    return power_base * np.concatenate([np.asarray(x), np.asarray(y)]).reshape(inst.N, inst.T)


def blocks_from_schedule(inst, schedule, power_base=DEFAULT_POWER_BASE):
    P = np.asarray(schedule, dtype=float).reshape(inst.N, inst.T) / power_base
    return P[:inst.N1].reshape(-1).copy(), P[inst.N1:].reshape(-1).copy()


def proportional_schedule(inst: EDInstance):
    """Split each period's demand in proportion to the units' output ranges.

    Satisfies power balance and the output limits; ramp limits are not enforced.
    """
    pmin, pmax = inst.unit_array("p_min"), inst.unit_array("p_max")
    share = (inst.demand - pmin.sum()) / (pmax - pmin).sum()
    return pmin[:, None] + np.outer(pmax - pmin, share)


def feasible_start(inst: EDInstance, slack="project", power_base=DEFAULT_POWER_BASE):
    """Box-feasible start with every unit at ``p_min``.

    ``slack='project'`` puts ``z`` at the projection of the implied first
    differences onto the ramp band; ``slack='lower'`` puts it at the band's
    lower end.
    """
    problem = build_ed_problem(inst, power_base)
    x, y = problem.l.copy(), problem.p.copy()
    if slack == "project":
        z = np.clip(problem.C @ x + problem.D @ y, problem.r, problem.s)
    elif slack == "lower":
        z = problem.r.copy()
    else:
        raise ValueError(f"slack must be 'project' or 'lower', got {slack!r}")
    return x, y, z


# -- replication -----------------------------------------------------------------

def default_demand_fractions(T):
    """Daily curve rising from 55% to 85% of installed capacity and back."""
    t = np.arange(T)
    return 0.55 + 0.30 * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / max(T, 1)))


def replicate_instance(base5: Sequence[UnitParams], counts, T=24, demand_profile=None,
                       seed: Optional[int] = None) -> EDInstance:
    """Copy base unit ``i`` ``counts[i]`` times.

    ``demand_profile`` gives per-period fractions of total capacity (default
    :func:`default_demand_fractions`); a single unit with no profile gets the
    midpoint of its output range. ``seed`` adds reproducible 1% noise to the
    fractions.
    """
    counts = [int(c) for c in counts]
    if len(counts) != len(base5):
        raise InstanceError(f"need {len(base5)} counts, got {len(counts)}")
    if any(c < 0 for c in counts) or sum(counts) == 0:
        raise InstanceError("counts must be non-negative and not all zero")
    units = [u for u, c in zip(base5, counts) for _ in range(c)]
    pmin = sum(u.p_min for u in units)
    pmax = sum(u.p_max for u in units)
    if demand_profile is None and len(units) == 1:
        demand = np.full(T, 0.5 * (pmin + pmax))
    else:
        frac = default_demand_fractions(T) if demand_profile is None else \
            np.asarray(demand_profile, dtype=float).reshape(T)
        if seed is not None:
            frac = frac * (1.0 + 0.01 * np.random.default_rng(seed).standard_normal(T))
        demand = np.clip(frac * pmax, pmin, pmax)
    return EDInstance(units, T, demand)


def load_base5():
    """The bundled synthetic 5-unit system (24 periods)."""
    text = resources.files(__package__).joinpath("data/base5_synthetic.json").read_text()
    doc = json.loads(text)
    return [_unit_from_dict(u, k) for k, u in enumerate(doc["units"])]


def table1_instance(row, T=24, seed=None, base5=None):
    """Replicated instance for row ``row`` (1-based) of the unit-count table."""
    if not 1 <= row <= len(TABLE1_COUNTS):
        raise InstanceError(f"row must be in 1..{len(TABLE1_COUNTS)}, got {row}")
    return replicate_instance(base5 or load_base5(), TABLE1_COUNTS[row - 1], T, seed=seed)


def base5_instance(T=24, seed=None):
    return replicate_instance(load_base5(), (1, 1, 1, 1, 1), T, seed=seed)


# -- files ----------------------------------------------------------------------

_UNIT_FIELDS = tuple(f.name for f in fields(UnitParams))


def _unit_from_dict(doc, k):
    if not isinstance(doc, dict):
        raise InstanceError(f"units[{k}] must be an object")
    for name in _UNIT_FIELDS:
        if name not in doc:
            raise InstanceError(f"units[{k}] is missing field {name!r}")
    extra = set(doc) - set(_UNIT_FIELDS)
    if extra:
        raise InstanceError(f"units[{k}] has unknown field(s) {sorted(extra)}")
    try:
        return UnitParams(**{name: doc[name] for name in _UNIT_FIELDS})
    except InstanceError as exc:
        raise InstanceError(f"units[{k}]: {exc}") from None


def instance_from_dict(doc) -> EDInstance:
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    for name in ("version", "T", "units", "demand"):
        if name not in doc:
            raise InstanceError(f"instance is missing field {name!r}")
    if doc["version"] != INSTANCE_VERSION:
        raise InstanceError(f"unsupported instance version {doc['version']!r}")
    if not isinstance(doc["units"], list):
        raise InstanceError("field 'units' must be a list")
    if not isinstance(doc["demand"], list):
        raise InstanceError("field 'demand' must be a list")
    units = [_unit_from_dict(u, k) for k, u in enumerate(doc["units"])]
    return EDInstance(units, doc["T"], np.asarray(doc["demand"], dtype=float))


def load_instance(path) -> EDInstance:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        return instance_from_dict(doc)
    except InstanceError as exc:
        raise InstanceError(f"{path}: {exc}") from None


def save_instance(inst: EDInstance, path):
    with open(path, "w") as fh:
        json.dump(inst.to_dict(), fh, indent=1)


def write_schedule_csv(inst, x, y, path, power_base=DEFAULT_POWER_BASE):
    """Rows ``unit, period, output_mw`` with 1-based unit and period numbers."""
    P = schedule_from_blocks(inst, x, y, power_base)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "period", "output_mw"])
        for i in range(inst.N):
            for t in range(inst.T):
                w.writerow([i + 1, t + 1, repr(float(P[i, t]))])


def dispatch_config(problem, **overrides):
    """Solver settings for dispatch runs: ``rho = sigma = 0.8``, ``beta = 2000``,
    ``xi = 0.001``, ``|d|_inf <= 0.005`` and feasibility ``0.1 * (1 + |c|_inf)``.

    The loose feasibility tolerance reflects the penalty bias of a fixed
    ``beta`` with a slowly moving multiplier; the direction test governs.
    Keyword arguments override individual fields.
    """
    scale = float(np.max(np.abs(problem.b), initial=0.0))
    settings = dict(rho=0.8, sigma=0.8, beta=2000.0, xi=0.001, tol_direction=0.005,
                    tol_feas=0.1 * (1.0 + scale))
    settings.update(overrides)
    return SolverConfig(**settings)
