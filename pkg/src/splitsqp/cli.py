"""Command-line driver: solve, bench, verify and gen.

Exit codes: 0 converged (or verified), 2 not converged (or verification
failed), 1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time

import numpy as np

from . import al_sqp, convex_sets, splitting
from .dispatch import (DEFAULT_POWER_BASE, InstanceError, build_ed_problem, feasible_start,
                       instance_from_dict, load_instance, dispatch_config, replicate_instance,
                       load_base5, save_instance, table1_instance, write_schedule_csv)
from .kkt import ResidualBreakdown, kkt_residual_original, kkt_residual_reformulated, \
    map_multipliers_to_original
from .problem import (SolverConfig, make_iterate, problem_from_dict, problem_to_dict,
                      reformulate)
from .report import CSV_COLUMNS, load_report

log = logging.getLogger("splitsqp")

EXIT_OK, EXIT_IO, EXIT_FAIL = 0, 1, 2
ALGORITHMS = ("split", "al", "set-ext")
BENCH_COLUMNS = ("row", "N") + tuple(f"split_{c}" for c in CSV_COLUMNS) + \
    tuple(f"al_{c}" for c in CSV_COLUMNS) + ("RE",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def compute_re(f_split, f_baseline):
    """Relative gap ``(f_split - f_baseline) / f_baseline`` in percent."""
    if f_baseline == 0:
        raise ZeroDivisionError("relative error is undefined for a zero baseline value")
    return (f_split - f_baseline) / f_baseline * 100.0


# -- problem loading ---------------------------------------------------------------

class Loaded:
    """A problem ready to solve, with its start, sets and embeddable document."""

    def __init__(self, problem, doc, w0=None, sets=None, instance=None, power_base=None):
        self.problem, self.doc, self.w0 = problem, doc, w0
        self.sets, self.instance, self.power_base = sets, instance, power_base


def _from_instance(inst, power_base=DEFAULT_POWER_BASE):
    problem = build_ed_problem(inst, power_base)
    x, y, z = feasible_start(inst, power_base=power_base)
    w0 = make_iterate(reformulate(problem), x, y, z)
    doc = {"kind": "ed", "instance": inst.to_dict(), "power_base": power_base}
    return Loaded(problem, doc, w0, instance=inst, power_base=power_base)


def problem_from_document(doc):
    """Rebuild a :class:`Loaded` from a problem document (ED or two-block)."""
    kind = doc.get("kind")
    if kind == "ed":
        return _from_instance(instance_from_dict(doc["instance"]),
                              doc.get("power_base", DEFAULT_POWER_BASE))
    if kind == "two-block":
        problem = problem_from_dict(doc)
        sets = None
        if "sets" in doc:
            sets = (convex_sets.set_from_dict(doc["sets"]["X"]),
                    convex_sets.set_from_dict(doc["sets"]["Y"]))
        return Loaded(problem, doc, sets=sets)
    if "units" in doc:
        return _from_instance(instance_from_dict(doc))
    raise InstanceError(f"unknown problem document kind {kind!r}")


def _load(args):
    if args.instance and args.table1_row:
        raise UsageError("give either --instance or --table1-row, not both")
    if args.table1_row:
        return _from_instance(table1_instance(args.table1_row, seed=args.seed))
    if not args.instance:
        raise UsageError("one of --instance or --table1-row is required")
    with open(args.instance) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{args.instance}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if doc.get("kind") is None and "units" in doc:
        return _from_instance(load_instance(args.instance))
    return problem_from_document(doc)


def _config(args, problem):
    if args.tol_feas is not None:
        tol_feas = args.tol_feas
    else:
        tol_feas = dispatch_config(problem).tol_feas
    return SolverConfig(rho=args.rho, sigma=args.sigma, beta=args.beta, xi=args.xi,
                        tol_direction=args.tol, tol_feas=tol_feas, max_iter=args.max_iter,
                        parallel_subproblems=args.parallel_subproblems)


def run_algorithm(algorithm, loaded, config):
    problem, w0 = loaded.problem, loaded.w0
    if algorithm == "split":
        return splitting.solve(problem, w0, config, problem_doc=loaded.doc)
    if algorithm == "al":
        return al_sqp.solve_baseline(problem, w0, config, problem_doc=loaded.doc)
    if algorithm == "set-ext":
        if loaded.sets is None:
            X = convex_sets.BoxSet(problem.l, problem.u)
            Y = convex_sets.BoxSet(problem.p, problem.q)
            doc = dict(loaded.doc)
        else:
            X, Y = loaded.sets
            doc = loaded.doc
        if loaded.doc.get("kind") == "ed" or "sets" not in doc:
            doc = dict(doc, sets={"X": X.to_dict(), "Y": Y.to_dict()})
        return convex_sets.solve_B(problem, X, Y, w0, config, problem_doc=doc)
    raise UsageError(f"unknown algorithm {algorithm!r}")


# -- subcommands ------------------------------------------------------------------

def _write_rows(path, columns, rows):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow(row)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_solve(args):
    loaded = _load(args)
    config = _config(args, loaded.problem)
    report = run_algorithm(args.algorithm, loaded, config)
    if args.out:
        report.save(args.out)
    if args.csv:
        _write_rows(args.csv, CSV_COLUMNS, [report.csv_row()])
    if args.schedule:
        if loaded.instance is None:
            raise UsageError("--schedule needs a dispatch instance")
        write_schedule_csv(loaded.instance, report.x, report.y, args.schedule, loaded.power_base)
    print(f"{report.algorithm}: {report.status} after {report.iterations} iterations, "
          f"F = {report.objective:.6f}, phi_eq = {report.phi_eq:.3e}, "
          f"kkt = {report.kkt.total:.3e} (tol {report.kkt_tolerance:.3e}), "
          f"{report.wall_time:.2f} s")
    if not report.converged:
        print(f"  {report.message}", file=sys.stderr)
    return EXIT_OK if report.converged else EXIT_FAIL


def _parse_rows(spec_list):
    rows = []
    for item in spec_list:
        for part in str(item).split(","):
            if "-" in part:
                lo, hi = part.split("-")
                rows.extend(range(int(lo), int(hi) + 1))
            elif part:
                rows.append(int(part))
    return rows


def cmd_bench(args):
    if not args.table1_row:
        raise UsageError("bench needs --table1-row (for example 1 or 1-3)")
    rows = []
    ok = True
    for row in _parse_rows(args.table1_row):
        loaded = _from_instance(table1_instance(row, seed=args.seed))
        config = _config(args, loaded.problem)
        reports = {alg: run_algorithm(alg, loaded, config) for alg in ("split", "al")}
        ok = ok and all(r.converged for r in reports.values())
        out = {"row": row, "N": loaded.instance.N}
        for alg, rep in reports.items():
            for col, val in rep.csv_row().items():
                out[f"{alg}_{col}"] = val
        out["RE"] = compute_re(reports["split"].objective, reports["al"].objective)
        rows.append(out)
        log.info("row %d done", row)
    _write_rows(args.csv, BENCH_COLUMNS, rows)
    return EXIT_OK if ok else EXIT_FAIL


def _close(a, b, rtol=1e-9, atol=1e-12):
    return math.isclose(a, b, rel_tol=rtol, abs_tol=atol)


def verify_report(report):
    """Recompute the certificate of a saved report; returns a list of problems found."""
    if report.problem_doc is None:
        return ["report has no embedded problem"]
    loaded = problem_from_document(report.problem_doc)
    rp = reformulate(loaded.problem)
    mult = report.multipliers
    if report.algorithm == "set-ext":
        sets = loaded.sets or (convex_sets.BoxSet(loaded.problem.l, loaded.problem.u),
                               convex_sets.BoxSet(loaded.problem.p, loaded.problem.q))
        kkt, orig = convex_sets.set_kkt_residuals(
            reformulate(convex_sets.set_problem(loaded.problem, *sets)),
            report.x, report.y, report.z, mult, sets)
    else:
        kkt = kkt_residual_reformulated(rp, report.x, report.y, report.z, mult)
        orig = kkt_residual_original(loaded.problem, report.x, report.y,
                                     map_multipliers_to_original(mult, rp.m1))
    issues = []
    pairs = [("objective", report.objective, loaded.problem.objective(report.x, report.y)),
             ("phi_eq", report.phi_eq,
              float(np.max(np.abs(rp.residual(report.x, report.y, report.z)), initial=0.0)))]
    for name in ResidualBreakdown.__dataclass_fields__:
        pairs.append((f"kkt.{name}", getattr(report.kkt, name), getattr(kkt, name)))
        pairs.append((f"kkt_original.{name}", getattr(report.kkt_original, name),
                      getattr(orig, name)))
    for name, stored, fresh in pairs:
        if not _close(stored, fresh):
            issues.append(f"{name}: stored {stored!r} but recomputed {fresh!r}")
    if report.converged and not kkt.total <= 10.0 * report.kkt_tolerance:
        issues.append(f"converged report has KKT residual {kkt.total:.3e} above "
                      f"10 x tolerance {report.kkt_tolerance:.3e}")
    return issues


def cmd_verify(args):
    try:
        report = load_report(args.report)
    except (KeyError, TypeError, ValueError) as exc:
        print(f"verify: malformed report {args.report}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    issues = verify_report(report)
    for line in issues:
        print(f"verify: {line}", file=sys.stderr)
    if issues:
        return EXIT_FAIL
    print(f"verify: {args.report} OK ({report.algorithm}, {report.status}, "
          f"kkt {report.kkt.total:.3e})")
    return EXIT_OK


def cmd_gen(args):
    if args.counts:
        inst = replicate_instance(load_base5(), args.counts, args.T, seed=args.seed)
    elif args.table1_row:
        inst = table1_instance(args.table1_row, T=args.T, seed=args.seed)
    else:
        raise UsageError("gen needs --table1-row or --counts")
    if not args.out:
        raise UsageError("gen needs --out")
    save_instance(inst, args.out)
    print(f"wrote {args.out}: N={inst.N}, T={inst.T}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _solver_flags(p):
    p.add_argument("--beta", type=float, default=2000.0)
    p.add_argument("--xi", type=float, default=0.001)
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--tol", type=float, default=0.005, help="tolerance on |d|_inf")
    p.add_argument("--tol-feas", type=float, default=None,
                   help="feasibility tolerance (default 0.1*(1+|c|_inf))")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--seed", type=int, default=None, help="seed for demand noise")
    p.add_argument("--parallel-subproblems", action="store_true",
                   help="solve the x- and y-subproblems in two threads")


def build_parser():
    parser = _Parser(prog="splitsqp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one instance with one algorithm")
    p.add_argument("--algorithm", choices=ALGORITHMS, default="split")
    p.add_argument("--instance", help="instance or problem JSON file")
    p.add_argument("--table1-row", type=int, help="replicated instance row (1-20)")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--csv", help="write the iter/F/phi_eq/C_t row here ('-' for stdout)")
    p.add_argument("--schedule", help="write the unit schedule CSV here")
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="paired split/al runs on replicated instances")
    p.add_argument("--table1-row", nargs="+", help="rows such as 1 3 or 1-5")
    p.add_argument("--csv", default="-", help="output CSV path (default stdout)")
    _solver_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="re-check a saved report")
    p.add_argument("report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a replicated dispatch instance")
    p.add_argument("--table1-row", type=int)
    p.add_argument("--counts", type=int, nargs=5, metavar="K")
    p.add_argument("--T", type=int, default=24)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)
    return parser


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_IO
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"splitsqp: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, InstanceError, ValueError) as exc:
        print(f"splitsqp: error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())
