"""Time-indexed integer programs for both scheduling formulations.

Two builders emit the same :class:`IlpProgram` shape:

* :func:`build_rcpsp` -- start indicators ``x_i_k`` with start-once,
  precedence and per-pool capacity rows (per-period for renewable pools,
  cumulative for non-renewable ones).
* :func:`build_hfnmcf` -- operand-net place markings ``qs_p_k`` and firing
  indicators ``um_t_k`` / ``up_t_k`` tied by the state-transition rows,
  duration coupling, and initial/final markings.

Constraint rows are grouped into named blocks (``program.blocks``) so tests
and reports can tell which rows realise which part of a formulation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .model import (
    FINISH,
    InfeasibleError,
    OperandKind,
    ProjectNetwork,
    TimeWindows,
    critical_path_windows,
    ensure_valid,
)
from .transform import OperandNet, required_final_marking

BINARY = "binary"
INTEGER = "integer"

RCPSP = "rcpsp"
HFNMCF = "hfnmcf"

# general-network machinery that the project specialisation drops entirely
OMITTED_BLOCKS = (
    "engineering-system-net",
    "synchronization",
    "exogenous-boundary",
    "device-models",
    "transition-marking",
)


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    block: str
    entity: str
    step: int
    lb: int = 0
    ub: int | None = 1


@dataclass(frozen=True)
class Constraint:
    name: str
    coeffs: Mapping[int, int]  # variable index -> coefficient
    sense: str  # "=", "<=", ">="
    rhs: int
    block: str

    def satisfied(self, lhs: int) -> bool:
        if self.sense == "=":
            return lhs == self.rhs
        if self.sense == "<=":
            return lhs <= self.rhs
        return lhs >= self.rhs


@dataclass
class IlpProgram:
    formulation: str
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, int] = field(default_factory=dict)
    blocks: dict[str, list[int]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def add_var(self, var: Variable) -> int:
        if var.name in self._index:
            raise ValueError(f"duplicate variable {var.name}")
        self._index[var.name] = len(self.variables)
        self.variables.append(var)
        return self._index[var.name]

    def add_row(self, name: str, coeffs: Mapping[int, int], sense: str, rhs: int, block: str) -> int:
        row = Constraint(name, {i: c for i, c in coeffs.items() if c}, sense, rhs, block)
        self.blocks.setdefault(block, []).append(len(self.constraints))
        self.constraints.append(row)
        return len(self.constraints) - 1

    def index(self, name: str) -> int:
        return self._index[name]

    def has_var(self, name: str) -> bool:
        return name in self._index

    def var_names(self) -> list[str]:
        return [v.name for v in self.variables]

    def vars_in_block(self, block: str) -> list[Variable]:
        return [v for v in self.variables if v.block == block]

    @property
    def start_block(self) -> str:
        return "x" if self.formulation == RCPSP else "um"

    def start_var(self, entity: str, step: int) -> str:
        return self.metadata["names"][entity].format(block=self.start_block, k=step)

    def name_of(self, block: str, entity: str, step: int) -> str:
        return self.metadata["names"][entity].format(block=block, k=step)


_SAFE = re.compile(r"[^A-Za-z0-9_]")


def _safe_names(entities: list[str]) -> dict[str, str]:
    """Map entity ids to LP-safe, unique name fragments."""
    out: dict[str, str] = {}
    used: set[str] = set()
    for e in entities:
        base = "fin" if e == FINISH else _SAFE.sub("_", e) or "_"
        cand, n = base, 1
        while cand in used:
            n += 1
            cand = f"{base}_{n}"
        used.add(cand)
        out[e] = cand
    return out


def build_rcpsp(net: ProjectNetwork, windows: TimeWindows | None = None) -> IlpProgram:
    ensure_valid(net)
    windows = windows or critical_path_windows(net)
    K = windows.horizon
    entities = net.ids + [FINISH]
    for e in entities:
        if windows.lst[e] < windows.est[e]:
            raise InfeasibleError(f"empty start window for {e}: [{windows.est[e]}, {windows.lst[e]}]")
    frag = _safe_names(entities)
    prog = IlpProgram(RCPSP)
    prog.metadata.update(
        names={e: "{block}_" + frag[e] + "_{k}" for e in entities},
        horizon=K,
        network=net,
        windows=windows,
        entities=entities,
        durations=dict(windows.durations),
        arcs=_augmented_arcs(net),
    )
    x: dict[str, dict[int, int]] = {}
    for e in entities:
        x[e] = {}
        for k in windows.window(e):
            x[e][k] = prog.add_var(Variable(f"x_{frag[e]}_{k}", BINARY, "x", e, k))

    prog.objective = {idx: k for k, idx in x[FINISH].items()}
    for e in entities:
        prog.add_row(f"once_{frag[e]}", {idx: 1 for idx in x[e].values()}, "=", 1, "start-once")
    d = windows.durations
    for i, j in prog.metadata["arcs"]:
        coeffs: dict[int, int] = {}
        for k, idx in x[j].items():
            coeffs[idx] = coeffs.get(idx, 0) + k
        for k, idx in x[i].items():
            coeffs[idx] = coeffs.get(idx, 0) - k
        prog.add_row(f"prec_{frag[i]}_{frag[j]}", coeffs, ">=", d[i], "precedence")
    pfrag = _safe_names([p.id for p in net.pools])
    for p in net.pools:
        demanders = [a for a in net.activities if a.demand(p.id)]
        for k in range(1, K + 1):
            coeffs = {}
            for a in demanders:
                if p.kind is OperandKind.RENEWABLE:
                    # occupied during periods s .. s+d-1
                    span = range(k - a.duration + 1, k + 1)
                else:
                    span = range(1, k + 1)
                for kk in span:
                    if kk in x[a.id]:
                        coeffs[x[a.id][kk]] = a.demand(p.id)
            if not coeffs:
                continue
            block = "renewable-capacity" if p.kind is OperandKind.RENEWABLE else "cumulative-capacity"
            prog.add_row(f"cap_{pfrag[p.id]}_{k}", coeffs, "<=", p.capacity, block)
    return prog


def _augmented_arcs(net: ProjectNetwork) -> list[tuple[str, str]]:
    return list(dict.fromkeys(net.arcs)) + [(s, FINISH) for s in net.sinks]


def operand_net_skeleton(onet: OperandNet) -> ProjectNetwork:
    """Precedence skeleton recovered from the completion places of ``onet``."""
    from .model import Activity

    acts = tuple(
        Activity(a, int(onet.durations[n])) for n, a in enumerate(onet.activity_ids)
    )
    arcs = []
    fin = onet.finish_index
    for row in range(onet.completion_rows.start, onet.n_places):
        producers = [onet.transitions[t] for t in onet.m_plus[row].nonzero()[0]]
        consumers = [t for t in onet.m_minus[row].nonzero()[0] if t != fin]
        for i in producers:
            arcs.extend((i, onet.transitions[t]) for t in consumers)
    return ProjectNetwork(acts, tuple(arcs))


def build_hfnmcf(onet: OperandNet, K: int, windows: TimeWindows | None = None) -> IlpProgram:
    if windows is None:
        windows = critical_path_windows(operand_net_skeleton(onet), K)
    elif windows.horizon != K:
        raise ValueError(f"windows built for horizon {windows.horizon}, not {K}")
    final = required_final_marking(onet)
    S, E = onet.n_places, onet.n_transitions
    pfrag = _safe_names(list(onet.places))
    tfrag = _safe_names(list(onet.transitions))
    prog = IlpProgram(HFNMCF)
    names = {t: "{block}_" + tfrag[t] + "_{k}" for t in onet.transitions}
    names.update({p: "{block}_" + pfrag[p] + "_{k}" for p in onet.places})
    prog.metadata.update(
        names=names,
        horizon=K,
        operand_net=onet,
        windows=windows,
        entities=list(onet.transitions),
        durations={t: int(onet.durations[n]) for n, t in enumerate(onet.transitions)},
        arcs=_augmented_arcs(operand_net_skeleton(onet)),
        omitted=OMITTED_BLOCKS,
    )
    qs = [[prog.add_var(Variable(f"qs_{pfrag[p]}_{k}", INTEGER, "qs", p, k, 0, None)) for k in range(1, K + 2)]
          for p in onet.places]
    um, up = [], []
    for n, t in enumerate(onet.transitions):
        win = windows.window(t)
        um.append([
            prog.add_var(Variable(f"um_{tfrag[t]}_{k}", BINARY, "um", t, k, 0, 1 if k in win else 0))
            for k in range(1, K + 1)
        ])
        up.append([prog.add_var(Variable(f"up_{tfrag[t]}_{k}", BINARY, "up", t, k)) for k in range(1, K + 1)])

    fin = onet.finish_index
    prog.objective = {um[fin][k - 1]: k for k in range(1, K + 1)}
    for k in range(1, K + 1):
        for p in range(S):
            coeffs = {qs[p][k]: -1, qs[p][k - 1]: 1}
            for t in range(E):
                if onet.m_plus[p, t]:
                    coeffs[up[t][k - 1]] = int(onet.m_plus[p, t])
                if onet.m_minus[p, t]:
                    coeffs[um[t][k - 1]] = coeffs.get(um[t][k - 1], 0) - int(onet.m_minus[p, t])
            prog.add_row(f"stf_{pfrag[onet.places[p]]}_{k}", coeffs, "=", 0, "state-transition")
    for t in range(E):
        d = int(onet.durations[t])
        name = tfrag[onet.transitions[t]]
        for k in range(1, K + 1):
            coeffs = {um[t][k - 1]: 1}
            if k + d <= K:
                coeffs[up[t][k + d - 1]] = -1
            prog.add_row(f"dur_{name}_{k}", coeffs, "=", 0, "duration-coupling")
        # completions with no matching start inside the horizon
        for k in range(1, min(d, K) + 1):
            prog.add_row(f"dur0_{name}_{k}", {up[t][k - 1]: 1}, "=", 0, "duration-coupling")
    for p in range(S):
        prog.add_row(f"init_{pfrag[onet.places[p]]}", {qs[p][0]: 1}, "=", int(onet.initial_marking[p]), "initial-condition")
    for p in range(S):
        prog.add_row(f"final_{pfrag[onet.places[p]]}", {qs[p][K]: 1}, "=", int(final[p]), "final-condition")
    for t in range(E):
        # start indicators past the horizon do not exist, so this row is vacuous
        prog.add_row(f"final_um_{tfrag[onet.transitions[t]]}", {}, "=", 0, "final-condition")
    prog.blocks["non-negativity"] = []
    prog.metadata["bounded_blocks"] = {"non-negativity": ["qs", "um", "up"]}
    return prog


def blackout(program: IlpProgram, entity: str, periods) -> list[str]:
    """Forbid ``entity`` from running in any of ``periods``.

    Start indicators whose run would cover a blacked-out period get an upper
    bound of zero; the names are recorded under ``metadata["fixed_zero"]``.
    The solver and :func:`evaluate` both honour the bounds.
    """
    periods = set(periods)
    d = program.metadata["durations"][entity]
    fixed = []
    for idx, v in enumerate(program.variables):
        if v.block != program.start_block or v.entity != entity or v.ub == 0:
            continue
        if periods & set(range(v.step, v.step + d)):
            program.variables[idx] = replace(v, ub=0)
            fixed.append(v.name)
    program.metadata.setdefault("fixed_zero", []).extend(fixed)
    return fixed


@dataclass(frozen=True)
class Evaluation:
    objective: int
    violations: tuple[str, ...]

    @property
    def feasible(self) -> bool:
        return not self.violations


def evaluate(program: IlpProgram, assignment: Mapping[str, int]) -> Evaluation:
    """Exact integer check of ``assignment`` against every row and bound.

    ``assignment`` is sparse: omitted variables are zero.  A nonzero value for
    a name the program does not declare is reported as a violation.
    """
    values = [0] * len(program.variables)
    violations: list[str] = []
    for name, v in assignment.items():
        if not program.has_var(name):
            if v:
                violations.append(f"undeclared:{name}")
            continue
        values[program.index(name)] = int(v)
    for var, v in zip(program.variables, values):
        if v < var.lb or (var.ub is not None and v > var.ub):
            violations.append(f"bound:{var.name}")
    for row in program.constraints:
        lhs = sum(c * values[i] for i, c in row.coeffs.items())
        if not row.satisfied(lhs):
            violations.append(row.name)
    objective = sum(c * values[i] for i, c in program.objective.items())
    return Evaluation(objective, tuple(violations))


def start_assignment(program: IlpProgram, starts: Mapping[str, int]) -> dict[str, int]:
    """Start indicators only (enough for the RCPSP program)."""
    return {program.start_var(e, k): 1 for e, k in starts.items()}


def trajectory_assignment(program: IlpProgram, trajectory) -> dict[str, int]:
    """Full variable assignment for the HFNMCF program from a simulated trajectory."""
    onet = program.metadata["operand_net"]
    out: dict[str, int] = {}
    K = program.metadata["horizon"]
    for p, place in enumerate(onet.places):
        for k in range(1, K + 2):
            out[program.name_of("qs", place, k)] = int(trajectory.q_s[p, k - 1])
    for t, tr in enumerate(onet.transitions):
        for k in range(1, K + 1):
            out[program.name_of("um", tr, k)] = int(trajectory.u_minus[t, k - 1])
            out[program.name_of("up", tr, k)] = int(trajectory.u_plus[t, k - 1])
    return out


def _terms(coeffs: Mapping[int, int], program: IlpProgram) -> list[str]:
    out = []
    for i, c in coeffs.items():
        name = program.variables[i].name
        sign = "-" if c < 0 else "+"
        out.append(f"{sign} {abs(c)} {name}")
    return out


def _wrap(prefix: str, terms: list[str], suffix: str = "") -> list[str]:
    lines, cur = [], prefix
    for term in terms:
        if len(cur) + len(term) > 200:
            lines.append(cur)
            cur = "   "
        cur += " " + term
    lines.append(cur + suffix)
    return lines


def to_lp(program: IlpProgram) -> str:
    """CPLEX LP text.  Variables fixed at zero are written as general integers."""
    sense = {"=": "=", "<=": "<=", ">=": ">="}
    lines = [f"\\ formulation: {program.formulation}", "Minimize"]
    lines += _wrap(" obj:", _terms(program.objective, program)) if program.objective else [" obj: 0"]
    lines.append("Subject To")
    for row in program.constraints:
        if not row.coeffs:
            continue
        lines += _wrap(f" {row.name}:", _terms(row.coeffs, program), f" {sense[row.sense]} {row.rhs}")
    lines.append("Bounds")
    binaries, generals = [], []
    for v in program.variables:
        if v.kind == BINARY and v.ub == 1 and v.lb == 0:
            binaries.append(v.name)
            continue
        generals.append(v.name)
        if v.ub is None:
            lines.append(f" {v.name} >= {v.lb}")
        elif v.ub == v.lb:
            lines.append(f" {v.name} = {v.lb}")
        else:
            lines.append(f" {v.lb} <= {v.name} <= {v.ub}")
    if binaries:
        lines.append("Binary")
        lines += _wrap("", binaries)
    if generals:
        lines.append("General")
        lines += _wrap("", generals)
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp(program: IlpProgram, path) -> Path:
    path = Path(path)
    path.write_text(to_lp(program))
    return path
