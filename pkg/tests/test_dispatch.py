import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splitsqp.dispatch import (DEFAULT_POWER_BASE, TABLE1_COUNTS, EDInstance, InstanceError,
                               UnitParams, base5_instance, blocks_from_schedule,
                               build_ed_problem, dispatch_config, ed_cost, feasible_start,
                               instance_from_dict, load_base5, load_instance,
                               proportional_schedule, replicate_instance, save_instance,
                               schedule_from_blocks, table1_instance, write_schedule_csv)


def test_table_counts():
    assert len(TABLE1_COUNTS) == 20
    assert table1_instance(1).N == 10
    assert sum(TABLE1_COUNTS[-1]) == 250
    assert sum(TABLE1_COUNTS[9]) == 100
    with pytest.raises(InstanceError, match="row"):
        table1_instance(21)


def test_single_unit_instance():
    base = load_base5()
    inst = replicate_instance(base, (1, 0, 0, 0, 0))
    assert inst.N == 1
    assert np.allclose(inst.demand, 0.5 * (base[0].p_min + base[0].p_max))


def test_replication_is_seeded():
    a, b = table1_instance(2, seed=7), table1_instance(2, seed=7)
    assert a == b and not a == table1_instance(2, seed=8)
    assert a == table1_instance(2, seed=7, base5=load_base5())


def test_bundled_data_is_valid():
    base = load_base5()
    assert len(base) == 5
    for u in base:
        # curvature is positive on the whole operating range
        assert 6 * u.a * u.p_min + 2 * u.b > 0 and 6 * u.a * u.p_max + 2 * u.b > 0
        assert u.p_min <= u.p_initial <= u.p_max


@pytest.mark.parametrize("power_base", [1.0, DEFAULT_POWER_BASE])
def test_builder_structure(power_base):
    inst = table1_instance(1)
    pr = build_ed_problem(inst, power_base)
    N, T, N1 = inst.N, inst.T, inst.N1
    assert pr.n1 == N1 * T and pr.n2 == (N - N1) * T and pr.m1 == T and pr.m2 == N * T
    # every balance row has one entry per unit
    assert np.all(pr.A.sum(axis=1) == N1) and np.all(pr.B.sum(axis=1) == N - N1)
    # objective Hessian is diagonal with positive entries at p_min
    H = pr.f_hess(pr.l)
    assert np.count_nonzero(H - np.diag(np.diag(H))) == 0 and np.all(np.diag(H) > 0)


def test_objective_matches_direct_cost(rng):
    inst = table1_instance(1)
    for S in (1.0, 100.0):
        pr = build_ed_problem(inst, S)
        P = proportional_schedule(inst)
        x, y = blocks_from_schedule(inst, P, S)
        assert pr.objective(x, y) == pytest.approx(ed_cost(inst, P), rel=1e-12)
        assert np.allclose(schedule_from_blocks(inst, x, y, S), P)


def test_ramp_band_equivalence(rng):
    # band rows equal first differences, with the initial output folded into t = 1
    inst = table1_instance(1)
    pr = build_ed_problem(inst, 1.0)
    p0 = inst.unit_array("p_initial")
    up, down = inst.unit_array("ramp_up"), inst.unit_array("ramp_down")
    for _ in range(100):
        P = rng.uniform(inst.unit_array("p_min")[:, None], inst.unit_array("p_max")[:, None],
                        (inst.N, inst.T))
        x, y = blocks_from_schedule(inst, P, 1.0)
        band = pr.C @ x + pr.D @ y
        diff = np.diff(np.c_[p0, P], axis=1)
        manual = np.all((diff <= up[:, None] + 1e-9) & (diff >= -down[:, None] - 1e-9))
        builder = np.all(band >= pr.r - 1e-9) and np.all(band <= pr.s + 1e-9)
        assert manual == builder
        offset = np.c_[p0, np.zeros((inst.N, inst.T - 1))]
        assert np.allclose(band.reshape(inst.N, inst.T) - offset, diff)


def test_power_balance_rows():
    inst = table1_instance(2, seed=3)
    pr = build_ed_problem(inst)
    P = proportional_schedule(inst)
    x, y = blocks_from_schedule(inst, P)
    assert np.max(np.abs(P.sum(axis=0) - inst.demand)) <= 1e-9
    assert np.max(np.abs(pr.A @ x + pr.B @ y - pr.b)) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_feasible_start_satisfies_boxes(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 4, 5)
    counts[rng.integers(5)] += 1
    inst = replicate_instance(load_base5(), counts, T=int(rng.integers(2, 30)), seed=seed)
    pr = build_ed_problem(inst)
    for slack in ("project", "lower"):
        x, y, z = feasible_start(inst, slack=slack)
        assert np.array_equal(x, pr.l) and np.array_equal(y, pr.p)
        assert np.all(z >= pr.r) and np.all(z <= pr.s)


def test_constant_trajectory_has_zero_differences():
    inst = base5_instance()
    pr = build_ed_problem(inst, 1.0)
    x, y = pr.l, pr.p
    band = (pr.C @ x + pr.D @ y).reshape(inst.N, inst.T)
    assert np.all(band[:, 1:] == 0)


def test_instance_round_trip(tmp_path):
    inst = table1_instance(3, seed=1)
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    assert load_instance(path) == inst


def test_schema_errors(tmp_path):
    doc = base5_instance().to_dict()
    del doc["units"][2]["ramp_up"]
    with pytest.raises(InstanceError, match="ramp_up"):
        instance_from_dict(doc)
    doc = base5_instance().to_dict()
    doc["demand"] = doc["demand"][:-1]
    with pytest.raises(InstanceError, match="demand has length"):
        instance_from_dict(doc)
    path = tmp_path / "broken.json"
    path.write_text('{"version": 1,\n "T": 24,\n "units": [}\n')
    with pytest.raises(InstanceError, match="line 3"):
        load_instance(path)


@pytest.mark.parametrize("change,match", [
    (dict(p_min=0.0), "p_min"), (dict(ramp_up=-1.0), "ramp"), (dict(a=float("nan")), "'a'"),
    (dict(a=-1.0), "curvature"),
])
def test_unit_validation(change, match):
    base = dict(a=0.0, b=0.01, c=2.0, d=10.0, p_min=10.0, p_max=50.0, ramp_down=5.0,
                ramp_up=5.0, p_initial=20.0)
    UnitParams(**base)
    with pytest.raises(InstanceError, match=match):
        UnitParams(**dict(base, **change))


def test_demand_outside_capacity():
    u = load_base5()[0]
    with pytest.raises(InstanceError, match="outside"):
        EDInstance([u], 2, [u.p_max + 1, u.p_min])


def test_schedule_csv(tmp_path):
    inst = base5_instance(T=3)
    pr = build_ed_problem(inst)
    x, y, _ = feasible_start(inst)
    path = tmp_path / "s.csv"
    write_schedule_csv(inst, x, y, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "unit,period,output_mw" and len(lines) == 1 + inst.N * 3
    assert float(lines[1].split(",")[2]) == pytest.approx(load_base5()[0].p_min)


def test_dispatch_config():
    pr = build_ed_problem(base5_instance())
    cfg = dispatch_config(pr, max_iter=7)
    assert (cfg.rho, cfg.sigma, cfg.beta, cfg.xi, cfg.tol_direction) == (0.8, 0.8, 2000, 0.001, 0.005)
    assert cfg.tol_feas == pytest.approx(0.1 * (1 + np.max(np.abs(pr.b))))
    assert cfg.max_iter == 7
