"""Command line entry point: ``hfsched validate|transform|solve|report``."""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

import yaml

from . import analysis, ingest, program as prog, solver
from .model import (
    HfschedError,
    InfeasibleError,
    InfeasibleHorizonError,
    OperandKind,
    ProjectNetwork,
    ValidationError,
    validate_network,
)
from .simulate import FiringSchedule, simulate
from .transform import build_operand_net, describe, to_dot

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_INVALID = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_NOINPUT = 66
EXIT_SOFTWARE = 70
EXIT_CANTCREAT = 73

THREADS_ENV = "HFSCHED_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _capacity(text: str) -> tuple[str, int]:
    pool, sep, value = text.partition("=")
    if not sep or not pool:
        raise argparse.ArgumentTypeError(f"expected POOL=UNITS, got {text!r}")
    try:
        return pool, int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"capacity must be an integer, got {value!r}") from None


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hfsched", description="Project scheduling through operand Petri nets.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="parse and check an instance")
    v.add_argument("path")

    def overrides(sp):
        sp.add_argument("--variant", choices=[k.value for k in OperandKind],
                        help="force every pool to this kind")
        sp.add_argument("--capacity", type=_capacity, action="append", default=[], metavar="POOL=UNITS")

    t = sub.add_parser("transform", help="emit the operand net of an instance")
    t.add_argument("path")
    overrides(t)
    t.add_argument("-o", "--output")
    t.add_argument("--format", choices=("text", "dot", "doc"), default="text")

    s = sub.add_parser("solve", help="solve to optimality and write a .result document")
    s.add_argument("path")
    overrides(s)
    s.add_argument("--formulation", choices=ingest.FORMULATIONS)
    s.add_argument("--horizon", type=_positive)
    s.add_argument("-o", "--output")
    s.add_argument("--lp-dir", help="also export the built programs as LP files here")
    s.add_argument("--time-limit", type=float)
    s.add_argument("--node-limit", type=_positive)
    s.add_argument("--threads", type=_positive)

    r = sub.add_parser("report", help="render a report from a .result document")
    r.add_argument("result")
    r.add_argument("kind", choices=("table", "slack", "eva"))
    r.add_argument("--format", choices=("text", "csv", "doc"), default="text")
    r.add_argument("--actual", help="result document of the executed schedule (eva)")
    r.add_argument("--values", default="unit", help="'unit' or a YAML/JSON map activity -> value (eva)")
    r.add_argument("--as-of", type=int, help="step at which value is measured (eva)")
    return p


def load_network(path: str) -> tuple[ProjectNetwork, dict]:
    """Read ``.sm`` as PSPLIB and anything else as a native document."""
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".sm":
        net = ingest.parse_psplib_sm(text, name=p.stem)
        report = validate_network(net)
        if not report.ok:
            raise ValidationError(report)
        return net, {}
    doc = ingest.parse_document(text)
    return doc.network, dict(doc.options)


def apply_overrides(net: ProjectNetwork, variant: str | None, capacities) -> ProjectNetwork:
    if variant:
        net = net.with_variant(OperandKind.parse(variant))
    if capacities:
        try:
            net = net.with_capacities(dict(capacities))
        except KeyError as exc:
            raise UsageError(f"--capacity names {exc.args[0]}") from None
    report = validate_network(net)
    if not report.ok:
        raise ValidationError(report)
    return net


def _emit(text: str, output: str | None) -> None:
    if output:
        try:
            Path(output).write_text(text)
        except OSError as exc:
            raise ingest.ResultsIOError(output, exc) from exc
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    try:
        net, _ = load_network(args.path)
    except ingest.InstanceValidationError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        for v in exc.report.violations:
            print(f"  {v}")
        return EXIT_INVALID
    except ValidationError as exc:
        for v in exc.report.violations:
            print(f"  {v}")
        return EXIT_INVALID
    print(f"ok: {len(net.activities)} activities, {len(net.arcs)} arcs, {len(net.pools)} pools ({net.variant})")
    return EXIT_OK


def operand_net_document(onet) -> dict:
    return {
        "places": list(onet.places),
        "transitions": list(onet.transitions),
        "durations": onet.durations.tolist(),
        "initial_marking": onet.initial_marking.tolist(),
        "m_plus": onet.m_plus.tolist(),
        "m_minus": onet.m_minus.tolist(),
        "red": onet.red.astype(int).tolist(),
    }


def cmd_transform(args) -> int:
    net, _ = load_network(args.path)
    net = apply_overrides(net, args.variant, args.capacity)
    onet = build_operand_net(net)
    if args.format == "dot":
        text = to_dot(onet)
    elif args.format == "doc":
        text = ingest.dumps_results(operand_net_document(onet))
    else:
        text = describe(onet)
    _emit(text, args.output)
    if args.output:
        print(f"places {onet.n_places} transitions {onet.n_transitions} -> {args.output}")
    return EXIT_OK


def _solve_options(args, opts: dict) -> solver.SolveOptions:
    # flags win over instance options, which win over the environment
    threads = args.threads or opts.get("threads")
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        try:
            threads = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if threads < 1:
            raise UsageError(f"{THREADS_ENV} must be at least 1")
    return solver.SolveOptions(
        node_limit=args.node_limit or opts.get("node_limit"),
        time_limit=args.time_limit if args.time_limit is not None else opts.get("time_limit"),
        threads=threads,
    )


def solve_instance(net: ProjectNetwork, formulation: str, horizon: int | None, options: solver.SolveOptions,
                   lp_dir: str | None = None):
    """Solve one or both formulations.

    Returns ``(schedule, trajectory, summary)`` where ``summary`` maps each
    formulation to its objective plus the equivalence verdict for ``both``.
    """
    from .model import default_horizon

    K = default_horizon(net) if horizon is None else horizon
    forms = [prog.RCPSP, prog.HFNMCF] if formulation == "both" else [formulation]
    if lp_dir:
        Path(lp_dir).mkdir(parents=True, exist_ok=True)
        for f in forms:
            try:
                built = solver.build_program(net, f, K)
            except (InfeasibleError, InfeasibleHorizonError):
                continue
            prog.export_lp(built, Path(lp_dir) / f"{net.name}.{f}.lp")
    summary: dict = {}
    if formulation == "both":
        report = solver.check_equivalence(net, K, options)
        schedule = report.rcpsp
        summary = {prog.RCPSP: report.rcpsp.objective, prog.HFNMCF: report.hfnmcf.objective,
                   "equivalent": report.equivalent, "checks": dict(report.cross_checks)}
    else:
        schedule, _, stats = solver.solve_network(net, formulation, K, options)
        summary = {formulation: schedule.objective, "nodes": stats.nodes}
    trajectory = None
    if schedule.objective is not None:
        trajectory = simulate(build_operand_net(net), FiringSchedule(dict(schedule.starts)), K)
        summary["certificates"] = [solver.certificate(solver.build_program(net, f, K), schedule.starts) for f in forms]
    return schedule, trajectory, summary


def cmd_solve(args) -> int:
    net, opts = load_network(args.path)
    net = apply_overrides(net, args.variant or opts.get("variant"), args.capacity)
    formulation = args.formulation or opts.get("formulation", "both")
    horizon = args.horizon or opts.get("horizon")
    schedule, trajectory, summary = solve_instance(net, formulation, horizon, _solve_options(args, opts), args.lp_dir)

    def ms(obj):
        return "infeasible" if obj is None else str(obj - 1)

    if formulation == "both":
        eq = "true" if summary["equivalent"] else "false"
        print(f"rcpsp={ms(summary['rcpsp'])} hfnmcf={ms(summary['hfnmcf'])} equivalent={eq}")
    else:
        print(f"{formulation}={ms(summary[formulation])}")
    if args.verbose and schedule.objective is not None:
        print(f"objective (finish start) {schedule.objective}, makespan {schedule.makespan}, status {schedule.status}",
              file=sys.stderr)
        print("starts " + " ".join(f"{a}={k}" for a, k in schedule.activity_starts.items()), file=sys.stderr)
    if args.output:
        extra = {"summary": {k: v for k, v in summary.items() if k not in ("nodes", "certificates")},
                 "certificates": summary.get("certificates", [])}
        try:
            ingest.write_results(schedule, trajectory, args.output, network=net, extra=extra)
        except ingest.ResultsIOError as exc:
            print(f"hfsched: cannot write {exc}", file=sys.stderr)
            return EXIT_CANTCREAT
    return EXIT_OK if schedule.objective is not None else EXIT_INFEASIBLE


def _trajectory(doc: ingest.ResultDocument):
    if doc.objective is None:
        raise UsageError("result document holds no schedule")
    onet = build_operand_net(doc.network)
    return simulate(onet, FiringSchedule(dict(doc.starts)), doc.horizon)


def _values(spec: str, net: ProjectNetwork) -> dict:
    if spec == "unit":
        return analysis.unit_values(net)
    data = yaml.safe_load(Path(spec).read_text())
    if not isinstance(data, dict):
        raise ingest.ParseError("value file must map activity ids to numbers", 1, spec)
    return {str(k): Fraction(str(v)) for k, v in data.items()}


def cmd_report(args) -> int:
    if args.kind != "eva" and (args.actual or args.as_of is not None):
        raise UsageError("--actual and --as-of only apply to the eva report")
    doc = ingest.read_results(args.result)
    traj = _trajectory(doc)
    if args.kind == "table":
        tables = analysis.schedule_table(traj, doc.network)
        if args.format == "csv":
            text = "".join(t.to_csv() for t in tables)
        elif args.format == "doc":
            text = ingest.dumps_results({t.pool_id or "-": {"per_period": list(t.per_period),
                                                            "cumulative": list(t.cumulative)} for t in tables})
        else:
            text = "\n".join(t.to_text() for t in tables)
    elif args.kind == "slack":
        rep = analysis.slack_times(doc.starts, doc.network, traj)
        if args.format == "text":
            text = rep.render()
        else:
            rows = [(i, j, t) for (i, j), t in rep.arcs.items()]
            if args.format == "csv":
                text = "predecessor,successor,wait\n" + "".join(f"{i},{j},{t}\n" for i, j, t in rows)
            else:
                text = ingest.dumps_results({"arcs": [[i, j, t] for i, j, t in rows], "held_steps": rep.held_steps})
    else:
        actual = _trajectory(ingest.read_results(args.actual)) if args.actual else traj
        as_of = args.as_of if args.as_of is not None else doc.objective
        rep = analysis.earned_value(traj, actual, _values(args.values, doc.network), as_of)
        spi = "undefined" if rep.spi is None else str(rep.spi)
        if args.format == "csv":
            text = f"as_of,ev,pv,sv,spi\n{as_of},{rep.earned},{rep.planned},{rep.sv},{spi}\n"
        elif args.format == "doc":
            text = ingest.dumps_results({"as_of": as_of, "ev": str(rep.earned), "pv": str(rep.planned),
                                         "sv": str(rep.sv), "spi": spi})
        else:
            text = rep.render()
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "transform": cmd_transform, "solve": cmd_solve, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hfsched: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"hfsched: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_NOINPUT
    except ingest.ResultsIOError as exc:
        print(f"hfsched: cannot access {exc}", file=sys.stderr)
        return EXIT_CANTCREAT
    except ingest.InstanceValidationError as exc:
        print(f"hfsched: invalid instance: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ingest.ParseError as exc:
        print(f"hfsched: parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValidationError as exc:
        print(f"hfsched: invalid network: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InfeasibleHorizonError, InfeasibleError) as exc:
        print(f"hfsched: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except solver.EquivalenceError as exc:
        print(f"hfsched: formulations diverge: {exc}", file=sys.stderr)
        return EXIT_SOFTWARE
    except solver.SearchLimitError as exc:
        print(f"hfsched: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except HfschedError as exc:
        print(f"hfsched: {exc}", file=sys.stderr)
        return EXIT_SOFTWARE


if __name__ == "__main__":
    sys.exit(main())
