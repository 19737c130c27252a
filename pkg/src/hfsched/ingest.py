"""Instance and result documents.

``.proj`` files are YAML with a fixed schema::

    schema: hfsched/1
    name: example
    pools:
      - {id: R1, kind: renewable, capacity: 8}
    activities:
      - {id: A, duration: 2, demands: {R1: 2}}
    arcs:
      - [A, C]
    options: {horizon: 18, formulation: both, time_limit: 60, node_limit: 1000000, threads: 1}

Single-mode PSPLIB ``.sm`` files are read only.  Results are JSON with
sorted keys and one matrix row per line so they diff cleanly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .model import (
    FINISH,
    Activity,
    HfschedError,
    OperandKind,
    OperandPool,
    ProjectNetwork,
    validate_network,
)

SCHEMA = "hfsched/1"
RESULT_FORMAT = "hfsched-result/1"

_TOP = {"schema", "name", "pools", "activities", "arcs", "options"}
_POOL = {"id", "kind", "capacity"}
_ACTIVITY = {"id", "duration", "demands", "label"}
_OPTIONS = {"horizon", "formulation", "variant", "time_limit", "node_limit", "threads"}
FORMULATIONS = ("rcpsp", "hfnmcf", "both")


class ParseError(HfschedError):
    def __init__(self, message: str, line: int = 0, where: str = ""):
        self.line = line
        self.where = where
        loc = f"line {line}" + (f" ({where})" if where else "")
        super().__init__(f"{loc}: {message}")


class InstanceValidationError(ParseError):
    def __init__(self, report, line: int, where: str):
        self.report = report
        super().__init__("; ".join(str(v) for v in report.violations), line, where)


class ResultsIOError(HfschedError):
    def __init__(self, path, cause: OSError):
        self.path = Path(path)
        super().__init__(f"{path}: {cause.strerror or cause}")


@dataclass(frozen=True)
class InstanceDocument:
    network: ProjectNetwork
    options: Mapping[str, Any] = field(default_factory=dict)
    schema: str = SCHEMA


class _Node:
    """Plain value plus the source line of every nested element."""

    def __init__(self, value, line: int, children=None):
        self.value = value
        self.line = line
        self.children = children  # dict key -> _Node or list of _Node


def _lift(node: yaml.Node, loader: yaml.SafeLoader) -> _Node:
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        kids: dict[Any, _Node] = {}
        for k, v in node.value:
            key = _lift(k, loader).value
            if key in kids:
                raise ParseError(f"duplicate key {key!r}", k.start_mark.line + 1, str(key))
            kids[key] = _lift(v, loader)
        return _Node({k: n.value for k, n in kids.items()}, line, kids)
    if isinstance(node, yaml.SequenceNode):
        kids_l = [_lift(v, loader) for v in node.value]
        return _Node([n.value for n in kids_l], line, kids_l)
    return _Node(loader.construct_object(node), line)


def _check_keys(node: _Node, allowed: set[str], where: str) -> None:
    if not isinstance(node.value, dict):
        raise ParseError(f"expected a mapping for {where}", node.line, where)
    for key, kid in node.children.items():
        if key not in allowed:
            raise ParseError(f"unknown field {key!r}", kid.line, where)


def _int(node: _Node, where: str) -> int:
    if isinstance(node.value, bool) or not isinstance(node.value, int):
        raise ParseError(f"expected an integer, got {node.value!r}", node.line, where)
    return node.value


def _ident(node: _Node, where: str) -> str:
    if isinstance(node.value, bool) or not isinstance(node.value, (str, int)):
        raise ParseError(f"expected an identifier, got {node.value!r}", node.line, where)
    return str(node.value)


def _require(node: _Node, key: str, where: str) -> _Node:
    if key not in node.children:
        raise ParseError(f"missing field {key!r}", node.line, where)
    return node.children[key]


def parse_document(text: str) -> InstanceDocument:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(exc.problem or str(exc), mark.line + 1 if mark else 0) from None
    if root is None:
        raise ParseError("empty document", 0)
    loader = yaml.SafeLoader("")
    try:
        top = _lift(root, loader)
    finally:
        loader.dispose()
    _check_keys(top, _TOP, "document")
    schema = _require(top, "schema", "document")
    if schema.value != SCHEMA:
        raise ParseError(f"unsupported schema {schema.value!r} (expected {SCHEMA})", schema.line, "schema")
    name = str(top.children["name"].value) if "name" in top.children else "project"

    pools, lines = [], {}
    for n, p in enumerate(_seq(top, "pools")):
        where = f"pools[{n}]"
        _check_keys(p, _POOL, where)
        pid = _ident(_require(p, "id", where), where + ".id")
        kind_node = _require(p, "kind", where)
        try:
            kind = OperandKind.parse(str(kind_node.value))
        except ValueError as exc:
            raise ParseError(str(exc), kind_node.line, where + ".kind") from None
        pools.append(OperandPool(pid, kind, _int(_require(p, "capacity", where), where + ".capacity")))
        lines.setdefault(pid, p.line)

    acts = []
    for n, a in enumerate(_seq(top, "activities")):
        where = f"activities[{n}]"
        _check_keys(a, _ACTIVITY, where)
        aid = _ident(_require(a, "id", where), where + ".id")
        demands = {}
        if "demands" in a.children:
            dn = a.children["demands"]
            if not isinstance(dn.value, dict):
                raise ParseError("expected a mapping of pool -> amount", dn.line, where + ".demands")
            for key, kid in dn.children.items():
                demands[str(key)] = _int(kid, f"{where}.demands.{key}")
        label = str(a.children["label"].value) if "label" in a.children else ""
        acts.append(Activity(aid, _int(_require(a, "duration", where), where + ".duration"), demands, label))
        lines.setdefault(aid, a.line)

    arcs = []
    for n, e in enumerate(_seq(top, "arcs")):
        if not isinstance(e.value, list) or len(e.value) != 2:
            raise ParseError("an arc is a [predecessor, successor] pair", e.line, f"arcs[{n}]")
        arcs.append((_ident(e.children[0], f"arcs[{n}]"), _ident(e.children[1], f"arcs[{n}]")))
        lines.setdefault(arcs[-1], e.line)

    options = {}
    if "options" in top.children:
        on = top.children["options"]
        _check_keys(on, _OPTIONS, "options")
        for key in ("horizon", "node_limit", "threads"):
            if key in on.children:
                options[key] = _int(on.children[key], f"options.{key}")
                if options[key] < 1:
                    raise ParseError(f"{key} must be at least 1", on.children[key].line, f"options.{key}")
        if "time_limit" in on.children:
            tn = on.children["time_limit"]
            if isinstance(tn.value, bool) or not isinstance(tn.value, (int, float)) or tn.value <= 0:
                raise ParseError(f"expected a positive number of seconds, got {tn.value!r}", tn.line, "options.time_limit")
            options["time_limit"] = float(tn.value)
        if "formulation" in on.children:
            f = str(on.children["formulation"].value)
            if f not in FORMULATIONS:
                raise ParseError(f"unknown formulation {f!r}", on.children["formulation"].line, "options.formulation")
            options["formulation"] = f
        if "variant" in on.children:
            vn = on.children["variant"]
            try:
                options["variant"] = OperandKind.parse(str(vn.value)).value
            except ValueError as exc:
                raise ParseError(str(exc), vn.line, "options.variant") from None

    net = ProjectNetwork(tuple(acts), tuple(arcs), tuple(pools), name)
    report = validate_network(net)
    if not report.ok:
        first = report.violations[0]
        subject = first.subject[0] if len(first.subject) == 1 else tuple(first.subject)
        line = lines.get(subject, lines.get(first.subject[0], 0) if first.subject else 0)
        raise InstanceValidationError(report, line, first.code)
    return InstanceDocument(net, options)


def _seq(top: _Node, key: str) -> list[_Node]:
    if key not in top.children or top.children[key].value is None:
        return []
    node = top.children[key]
    if not isinstance(node.value, list):
        raise ParseError(f"expected a list for {key}", node.line, key)
    return node.children


def parse_native(text: str) -> ProjectNetwork:
    return parse_document(text).network


def _ordered_document(doc: InstanceDocument) -> dict:
    net = doc.network
    out: dict[str, Any] = {"schema": doc.schema, "name": net.name}
    out["pools"] = [{"id": p.id, "kind": p.kind.value, "capacity": p.capacity} for p in net.pools]
    acts = []
    for a in net.activities:
        entry: dict[str, Any] = {"id": a.id, "duration": a.duration}
        if a.demands:
            entry["demands"] = dict(a.demands)
        if a.label != a.id:
            entry["label"] = a.label
        acts.append(entry)
    out["activities"] = acts
    out["arcs"] = [list(e) for e in net.arcs]
    if doc.options:
        out["options"] = dict(doc.options)
    return out


def serialize_native(doc: InstanceDocument | ProjectNetwork) -> str:
    if isinstance(doc, ProjectNetwork):
        doc = InstanceDocument(doc)
    return yaml.safe_dump(_ordered_document(doc), sort_keys=False, default_flow_style=None, allow_unicode=True)


def load_instance(path) -> InstanceDocument:
    return parse_document(Path(path).read_text())


# -- PSPLIB single-mode ------------------------------------------------------

_SECTIONS = ("PRECEDENCE RELATIONS", "REQUESTS/DURATIONS", "RESOURCEAVAILABILITIES")


def _section_lines(lines: list[str], title: str) -> list[tuple[int, str]]:
    for n, line in enumerate(lines):
        if line.strip().upper().startswith(title):
            body = []
            for m in range(n + 1, len(lines)):
                if lines[m].startswith("***"):
                    return body
                body.append((m + 1, lines[m]))
            return body
    raise ParseError(f"missing section {title!r}", len(lines))


def _header_int(lines: list[str], pattern: str, default=None) -> int | None:
    rx = re.compile(pattern, re.IGNORECASE)
    for line in lines:
        if rx.search(line):
            nums = re.findall(r"-?\d+", line.split(":", 1)[-1])
            if nums:
                return int(nums[0])
    return default


def parse_psplib_sm(text: str, name: str = "psplib") -> ProjectNetwork:
    """Read a single-mode PSPLIB file.

    The supersource and supersink jobs become the implicit dummy start and
    finish; every other job keeps its number as id.  Renewable resources map to
    renewable pools ``R1 .. Rm``.
    """
    lines = text.splitlines()
    if not text.strip():
        raise ParseError("empty document", 0)
    n_jobs = _header_int(lines, r"^jobs")
    n_ren = _header_int(lines, r"-\s*renewable", 0)
    n_non = _header_int(lines, r"-\s*nonrenewable", 0)
    n_dbl = _header_int(lines, r"-\s*doubly", 0)
    prec = _section_lines(lines, _SECTIONS[0])
    succ: dict[int, list[int]] = {}
    for ln, line in prec:
        nums = line.split()
        if not nums or not nums[0].isdigit():
            continue
        vals = [int(x) for x in nums]
        if len(vals) < 3:
            raise ParseError("precedence row needs job, modes and successor count", ln, "PRECEDENCE RELATIONS")
        if vals[1] != 1:
            raise ParseError(f"job {vals[0]} has {vals[1]} modes: multi-mode unsupported", ln, "PRECEDENCE RELATIONS")
        if len(vals) != 3 + vals[2]:
            raise ParseError(f"job {vals[0]} lists {len(vals) - 3} successors, header says {vals[2]}", ln)
        succ[vals[0]] = vals[3:]
    if n_non or n_dbl:
        raise ParseError("non-renewable and doubly constrained resources are unsupported", 0, "RESOURCES")
    req = _section_lines(lines, _SECTIONS[1])
    dur: dict[int, int] = {}
    dem: dict[int, list[int]] = {}
    for ln, line in req:
        nums = line.split()
        if not nums or not nums[0].isdigit():
            continue
        vals = [int(x) for x in nums]
        if len(vals) != 3 + n_ren:
            raise ParseError(f"request row has {len(vals) - 3} resource columns, expected {n_ren}", ln, "REQUESTS/DURATIONS")
        if vals[1] != 1:
            raise ParseError("multi-mode unsupported", ln, "REQUESTS/DURATIONS")
        dur[vals[0]] = vals[2]
        dem[vals[0]] = vals[3:]
    avail_rows = [[int(x) for x in line.split()] for _, line in _section_lines(lines, _SECTIONS[2])
                  if line.split() and all(x.lstrip("-").isdigit() for x in line.split())]
    caps = avail_rows[0] if avail_rows else []
    if len(caps) != n_ren:
        raise ParseError(f"expected {n_ren} resource availabilities, found {len(caps)}", len(lines), "RESOURCEAVAILABILITIES")
    jobs = sorted(succ)
    if n_jobs is not None and len(jobs) != n_jobs:
        raise ParseError(f"header declares {n_jobs} jobs, precedence section lists {len(jobs)}", 0, "PRECEDENCE RELATIONS")
    if set(jobs) != set(dur):
        raise ParseError("precedence and request sections list different jobs", 0, "REQUESTS/DURATIONS")
    if len(jobs) < 2:
        raise ParseError("a PSPLIB project needs a supersource and a supersink", 0)
    source, sink = jobs[0], jobs[-1]
    for j in (source, sink):
        if dur[j] or any(dem[j]):
            raise ParseError(f"dummy job {j} must have zero duration and demand", 0, "REQUESTS/DURATIONS")
    pools = tuple(OperandPool(f"R{n + 1}", OperandKind.RENEWABLE, c) for n, c in enumerate(caps))
    acts = tuple(
        Activity(str(j), dur[j], {f"R{n + 1}": r for n, r in enumerate(dem[j]) if r})
        for j in jobs[1:-1]
    )
    arcs = tuple(
        (str(i), str(j)) for i in jobs[1:-1] for j in succ[i] if j != sink
    )
    return ProjectNetwork(acts, arcs, pools, name)


# -- results -----------------------------------------------------------------

def _fmt(value, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_fmt(v, indent + 1)}' for k, v in sorted(value.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in value):
            return "[" + ", ".join(json.dumps(v) for v in value) + "]"
        items = [pad + "  " + _fmt(v, indent + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(value, np.integer):
        value = int(value)
    return json.dumps(value)


def results_document(schedule, trajectory, network: ProjectNetwork, extra: Mapping | None = None) -> dict:
    from .simulate import per_period_usage

    doc: dict[str, Any] = {
        "format": RESULT_FORMAT,
        "instance": _ordered_document(InstanceDocument(network)),
        "formulation": schedule.formulation,
        "status": schedule.status,
        "objective": schedule.objective,
        "makespan": schedule.makespan,
    }
    if trajectory is not None:
        onet = trajectory.net
        dur = dict(zip(onet.transitions, onet.durations.tolist()))
        doc["horizon"] = trajectory.horizon
        doc["activities"] = {
            a: {"start": k, "completion": k + dur[a], "duration": dur[a]}
            for a, k in schedule.starts.items()
            if a != FINISH
        }
        doc["finish_start"] = schedule.starts.get(FINISH)
        usage = per_period_usage(trajectory, onet)
        doc["usage"] = {
            p: {"per_period": usage.per_period[n].tolist(), "cumulative": usage.cumulative[n].tolist()}
            for n, p in enumerate(usage.pool_ids)
        }
        doc["trajectory"] = {
            "places": list(onet.places),
            "transitions": list(onet.transitions),
            "q_s": trajectory.q_s.tolist(),
            "q_e": trajectory.q_e.tolist(),
            "u_minus": trajectory.u_minus.tolist(),
            "u_plus": trajectory.u_plus.tolist(),
        }
    if extra:
        doc.update(extra)
    return doc


def dumps_results(doc: Mapping) -> str:
    return _fmt(dict(doc)) + "\n"


def write_results(schedule, trajectory, path, network: ProjectNetwork | None = None, extra: Mapping | None = None) -> Path:
    if network is None:
        raise ValueError("write_results needs the network to embed")
    text = dumps_results(results_document(schedule, trajectory, network, extra))
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise ResultsIOError(path, exc) from exc
    return path


@dataclass(frozen=True)
class ResultDocument:
    network: ProjectNetwork
    starts: Mapping[str, int]
    objective: int | None
    status: str
    formulation: str
    horizon: int | None
    raw: Mapping[str, Any]

    @property
    def makespan(self) -> int | None:
        return None if self.objective is None else self.objective - 1


def read_results(path) -> ResultDocument:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ResultsIOError(path, exc) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, str(path)) from None
    if raw.get("format") != RESULT_FORMAT:
        raise ParseError(f"not a results document (format {raw.get('format')!r})", 1, str(path))
    net = parse_native(yaml.safe_dump(raw["instance"], sort_keys=False))
    starts = {a: v["start"] for a, v in raw.get("activities", {}).items()}
    if raw.get("finish_start") is not None:
        starts[FINISH] = raw["finish_start"]
    return ResultDocument(net, starts, raw.get("objective"), raw.get("status", ""), raw.get("formulation", ""),
                          raw.get("horizon"), raw)
