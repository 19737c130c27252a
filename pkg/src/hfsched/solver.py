"""Exact start-time branch-and-bound for both program formulations.

Both formulations are searched by the same depth-first enumeration of start
times: entities (activities plus the finish) are fixed in topological order,
each over its window in ascending order.  The formulations differ only in the
feasibility kernel consulted at every node:

* RCPSP -- program rows are evaluated incrementally.  Rows whose coefficients
  are all non-negative with a ``<=`` sense can only get worse as more starts are
  fixed, so they are checked on every update; every other row is checked once
  all entities it mentions are fixed.
* HFNMCF -- the operand-net marking is superposed transition by transition
  and must stay non-negative; the final marking is checked at the leaf.

Because entities are fixed in topological order, a partial marking can only
gain tokens from transitions that are still open (their completion tokens and
renewable returns come after their own consumption), so a deficit in a prefix
is a deficit in every completion.  The finished schedule is certified against
the complete row set with :func:`hfsched.program.evaluate`.
"""

from __future__ import annotations

import heapq
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import (
    FINISH,
    HfschedError,
    InfeasibleError,
    InfeasibleHorizonError,
    ProjectNetwork,
    critical_path_windows,
    default_horizon,
    ensure_valid,
)
from .program import (
    HFNMCF,
    RCPSP,
    IlpProgram,
    build_hfnmcf,
    build_rcpsp,
    evaluate,
    start_assignment,
    trajectory_assignment,
)
from .simulate import FiringSchedule, StateTrajectory, simulate, simulate_batch
from .transform import build_operand_net, required_final_marking

OPTIMAL = "Optimal"
FEASIBLE_ONLY = "FeasibleOnly"
INFEASIBLE = "Infeasible"


class SearchLimitError(HfschedError):
    """A node or time limit stopped the search before any schedule was found."""


class OracleSizeError(HfschedError):
    pass


class EquivalenceError(HfschedError):
    def __init__(self, message: str, dump: str):
        self.dump = dump
        super().__init__(f"{message}\n{dump}")


class CertificationError(HfschedError):
    pass


@dataclass(frozen=True)
class Schedule:
    starts: Mapping[str, int]
    objective: int | None
    status: str
    formulation: str = ""

    @property
    def makespan(self) -> int | None:
        # the finish fires one step after the last completed period
        return None if self.objective is None else self.objective - 1

    @property
    def activity_starts(self) -> dict[str, int]:
        return {a: k for a, k in self.starts.items() if a != FINISH}


@dataclass
class SolveStats:
    nodes: int = 0
    bound_trace: list = field(default_factory=list)  # (nodes, incumbent objective)
    wall_time: float = 0.0
    root_bound: int = 0


@dataclass(frozen=True)
class SolveOptions:
    node_limit: int | None = None
    time_limit: float | None = None
    threads: int = 1
    certify: bool = True


class _Limit(Exception):
    pass


class _RowKernel:
    """Incremental evaluation of a start-indicator program."""

    def __init__(self, program: IlpProgram, order: list[str]):
        depth = {e: n for n, e in enumerate(order)}
        self.var_of: dict[tuple[str, int], int] = {}
        self.open: set[tuple[str, int]] = set()
        for idx, v in enumerate(program.variables):
            self.var_of[(v.entity, v.step)] = idx
            if v.ub != 0:
                self.open.add((v.entity, v.step))
        self.cols: dict[int, list[tuple[int, int]]] = {}
        self.rows = program.constraints
        self.monotone: list[bool] = []
        self.closing: dict[int, list[int]] = {}  # depth -> rows to check there
        for r, row in enumerate(program.constraints):
            for idx, c in row.coeffs.items():
                self.cols.setdefault(idx, []).append((r, c))
            mono = row.sense == "<=" and all(c >= 0 for c in row.coeffs.values())
            self.monotone.append(mono)
            if not mono:
                last = max((depth[program.variables[i].entity] for i in row.coeffs), default=-1)
                self.closing.setdefault(last, []).append(r)
        self.lhs = [0] * len(program.constraints)
        self.early = [r for r, row in enumerate(program.constraints) if not row.coeffs and not row.satisfied(0)]

    def domain(self, entity: str, steps) -> list[int]:
        return [k for k in steps if (entity, k) in self.open]

    def push(self, entity: str, k: int, depth: int) -> bool:
        touched = self.cols.get(self.var_of[(entity, k)], ())
        ok = True
        for r, c in touched:
            self.lhs[r] += c
            if self.monotone[r] and self.lhs[r] > self.rows[r].rhs:
                ok = False
        if ok:
            for r in self.closing.get(depth, ()):
                if not self.rows[r].satisfied(self.lhs[r]):
                    ok = False
                    break
        return ok

    def pop(self, entity: str, k: int) -> None:
        for r, c in self.cols.get(self.var_of[(entity, k)], ()):
            self.lhs[r] -= c

    def leaf_ok(self) -> bool:
        return not self.early


class _MarkingKernel:
    """Incremental operand-net marking for the firing-indicator program."""

    def __init__(self, program: IlpProgram):
        onet = program.metadata["operand_net"]
        self.K = program.metadata["horizon"]
        self.onet = onet
        self.final = required_final_marking(onet)
        self.q = np.repeat(onet.initial_marking[:, None], self.K + 1, axis=1)
        self.t_index = {t: n for n, t in enumerate(onet.transitions)}
        self.allowed = {}
        for v in program.variables:
            if v.block == "um" and v.ub:
                self.allowed.setdefault(v.entity, set()).add(v.step)
        self.m_minus = onet.m_minus
        self.m_plus = onet.m_plus
        self.consumes = [np.flatnonzero(onet.m_minus[:, t]) for t in range(onet.n_transitions)]

    def domain(self, entity: str, steps) -> list[int]:
        d = int(self.onet.durations[self.t_index[entity]])
        ok = self.allowed.get(entity, set())
        return [k for k in steps if k in ok and k + d <= self.K]

    def push(self, entity: str, k: int, depth: int) -> bool:
        t = self.t_index[entity]
        d = int(self.onet.durations[t])
        self.q[:, k:] -= self.m_minus[:, t : t + 1]
        self.q[:, k + d :] += self.m_plus[:, t : t + 1]
        rows = self.consumes[t]
        return not (self.q[rows, k:] < 0).any()

    def pop(self, entity: str, k: int) -> None:
        t = self.t_index[entity]
        d = int(self.onet.durations[t])
        self.q[:, k:] += self.m_minus[:, t : t + 1]
        self.q[:, k + d :] -= self.m_plus[:, t : t + 1]

    def leaf_ok(self) -> bool:
        return bool((self.q[:, self.K] == self.final).all())


def _order(entities: list[str], arcs) -> list[str]:
    succ = {e: [] for e in entities}
    indeg = {e: 0 for e in entities}
    for i, j in arcs:
        succ[i].append(j)
        indeg[j] += 1
    heap = [e for e in entities if indeg[e] == 0 and e != FINISH]
    heapq.heapify(heap)
    out = []
    while heap:
        e = heapq.heappop(heap)
        out.append(e)
        for j in succ[e]:
            indeg[j] -= 1
            if indeg[j] == 0 and j != FINISH:
                heapq.heappush(heap, j)
    return out + [FINISH]


def _tails(order: list[str], arcs, dur: Mapping[str, int]) -> dict[str, int]:
    # longest duration chain strictly after each entity, up to the finish
    succ: dict[str, list[str]] = {e: [] for e in order}
    for i, j in arcs:
        succ[i].append(j)
    tail: dict[str, int] = {}
    for e in reversed(order):
        tail[e] = max((dur[j] + tail[j] for j in succ[e]), default=0)
    return tail


class _Search:
    def __init__(self, program: IlpProgram, options: SolveOptions):
        self.program = program
        self.options = options
        md = program.metadata
        self.windows = md["windows"]
        self.dur = md["durations"]
        arcs = md["arcs"]
        self.order = _order(list(md["entities"]), arcs)
        self.preds: dict[str, list[str]] = {e: [] for e in self.order}
        for i, j in arcs:
            self.preds[j].append(i)
        self.tail = _tails(self.order, arcs, self.dur)
        self.root_bound = self.windows.est[FINISH]
        self.K = md["horizon"]
        self.lock = threading.Lock()
        # (objective, subtree) of the best schedule so far; subtree -1 is the sentinel
        self.best = (self.K + 1, -1)
        self.best_starts: dict[str, int] | None = None
        self.stats = SolveStats(root_bound=self.root_bound)
        self.deadline = None if options.time_limit is None else time.monotonic() + options.time_limit
        self.hit_limit = False

    def kernel(self):
        if self.program.formulation == RCPSP:
            return _RowKernel(self.program, self.order)
        return _MarkingKernel(self.program)

    def candidates(self, kernel, entity: str, starts: dict[str, int]) -> list[int]:
        ready = max((starts[p] + self.dur[p] for p in self.preds[entity]), default=1)
        lo = max(ready, self.windows.est[entity])
        return kernel.domain(entity, range(lo, self.windows.lst[entity] + 1))

    def _tick(self):
        with self.lock:
            self.stats.nodes += 1
            n = self.stats.nodes
        if self.options.node_limit is not None and n > self.options.node_limit:
            self.hit_limit = True
            raise _Limit
        if self.deadline is not None and n % 256 == 0 and time.monotonic() > self.deadline:
            self.hit_limit = True
            raise _Limit

    def _pruned(self, bound: int, subtree: int) -> bool:
        value, owner = self.best
        if subtree == owner:
            return bound >= value
        return (bound, subtree) >= (value, owner)

    def _offer(self, value: int, subtree: int, starts: dict[str, int]) -> None:
        with self.lock:
            if (value, subtree) < self.best:
                self.best = (value, subtree)
                self.best_starts = dict(starts)
                self.stats.bound_trace.append((self.stats.nodes, value))

    def dfs(self, kernel, depth: int, starts: dict[str, int], bound: int, subtree: int) -> None:
        if depth == len(self.order):
            if kernel.leaf_ok():
                self._offer(starts[FINISH], subtree, starts)
            return
        entity = self.order[depth]
        for k in self.candidates(kernel, entity, starts):
            b = max(bound, k + self.dur[entity] + self.tail[entity])
            if self._pruned(b, subtree):
                break  # bounds only grow with k
            self._tick()
            if kernel.push(entity, k, depth):
                starts[entity] = k
                self.dfs(kernel, depth + 1, starts, b, subtree)
                del starts[entity]
            kernel.pop(entity, k)

    def run(self) -> None:
        kernel = self.kernel()
        if isinstance(kernel, _RowKernel) and kernel.early:
            return
        threads = max(1, self.options.threads)
        try:
            if threads == 1:
                self.dfs(kernel, 0, {}, self.root_bound, 0)
            else:
                self._run_parallel(threads)
        except _Limit:
            pass

    def _run_parallel(self, threads: int) -> None:
        from concurrent.futures import ThreadPoolExecutor

        root = self.order[0]
        probe = self.kernel()
        roots = self.candidates(probe, root, {})

        def work(n: int, k: int) -> None:
            kernel = self.kernel()
            b = max(self.root_bound, k + self.dur[root] + self.tail[root])
            if self._pruned(b, n):
                return
            try:
                self._tick()
                if kernel.push(root, k, 0):
                    self.dfs(kernel, 1, {root: k}, b, n)
            except _Limit:
                pass

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(roots)), roots))


def _complete_assignment(program: IlpProgram, starts: Mapping[str, int], trajectory: StateTrajectory) -> dict[str, int]:
    if program.formulation == RCPSP:
        return start_assignment(program, starts)
    return trajectory_assignment(program, trajectory)


def _trajectory_for(program: IlpProgram, starts: Mapping[str, int]) -> StateTrajectory:
    onet = program.metadata.get("operand_net")
    if onet is None:
        onet = build_operand_net(program.metadata["network"])
    K = program.metadata["horizon"]
    if onet.n_transitions and FINISH in starts:
        # the firing-indicator horizon: finish must be able to fire at its start step
        return simulate(onet, FiringSchedule(dict(starts)), K)
    raise CertificationError("schedule has no finish start")


def solve(program: IlpProgram, options: SolveOptions | None = None):
    """Minimise the finish start of ``program``.

    Returns ``(schedule, trajectory, stats)``; ``trajectory`` is ``None`` when
    no schedule exists.
    """
    options = options or SolveOptions()
    t0 = time.perf_counter()
    search = _Search(program, options)
    search.run()
    stats = search.stats
    stats.nodes = max(stats.nodes, 1)
    stats.wall_time = time.perf_counter() - t0
    if search.best_starts is None:
        if search.hit_limit:
            raise SearchLimitError(f"search stopped after {stats.nodes} nodes without a schedule")
        return Schedule({}, None, INFEASIBLE, program.formulation), None, stats
    starts = {e: search.best_starts[e] for e in search.order}
    trajectory = _trajectory_for(program, starts)
    if options.certify:
        ev = evaluate(program, _complete_assignment(program, starts, trajectory))
        if not ev.feasible or ev.objective != starts[FINISH]:
            raise CertificationError(f"search result violates {list(ev.violations)[:5]}")
    status = FEASIBLE_ONLY if search.hit_limit else OPTIMAL
    return Schedule(starts, starts[FINISH], status, program.formulation), trajectory, stats


def certificate(program: IlpProgram, starts: Mapping[str, int]) -> dict:
    """Re-check ``starts`` against every row and bound of ``program``."""
    trajectory = _trajectory_for(program, starts)
    ev = evaluate(program, _complete_assignment(program, starts, trajectory))
    return {
        "formulation": program.formulation,
        "rows": len(program.constraints),
        "variables": len(program.variables),
        "objective": ev.objective,
        "violations": list(ev.violations),
    }


def solve_network(net: ProjectNetwork, formulation: str = RCPSP, horizon: int | None = None,
                  options: SolveOptions | None = None):
    """Build and solve in one call; an unbuildable program counts as infeasible."""
    try:
        program = build_program(net, formulation, horizon)
    except (InfeasibleError, InfeasibleHorizonError):
        return Schedule({}, None, INFEASIBLE, formulation), None, SolveStats(nodes=1)
    return solve(program, options)


def build_program(net: ProjectNetwork, formulation: str, horizon: int | None = None) -> IlpProgram:
    ensure_valid(net)
    windows = critical_path_windows(net, horizon)
    if formulation == RCPSP:
        return build_rcpsp(net, windows)
    if formulation == HFNMCF:
        program = build_hfnmcf(build_operand_net(net), windows.horizon, windows)
        program.metadata["network"] = net
        return program
    raise ValueError(f"unknown formulation {formulation!r}")


MAX_ORACLE_ACTIVITIES = 8
MAX_ORACLE_HORIZON = 24
MAX_ORACLE_FRONTIER = 2_000_000


def brute_force(net: ProjectNetwork, K: int | None = None) -> Schedule:
    """Exhaustive optimum, independent of the program rows and the search.

    For each candidate finish step ``T`` (ascending) every start vector inside
    the windows is enumerated breadth-first, activity by activity in
    topological order, keeping the prefixes the simulator accepts.  The first
    ``T`` with a surviving complete vector is the optimum; the
    lexicographically smallest survivor is returned.
    """
    ensure_valid(net)
    K = default_horizon(net) if K is None else K
    if len(net.activities) > MAX_ORACLE_ACTIVITIES or K > MAX_ORACLE_HORIZON:
        raise OracleSizeError(
            f"oracle limited to {MAX_ORACLE_ACTIVITIES} activities and horizon {MAX_ORACLE_HORIZON}"
            f" (got {len(net.activities)}, {K})"
        )
    try:
        windows = critical_path_windows(net, K)
        onet = build_operand_net(net)
        required_final_marking(onet)
    except (InfeasibleHorizonError, InfeasibleError):
        return Schedule({}, None, INFEASIBLE, "oracle")
    from .model import topological_order

    order = topological_order(net)
    col = {a: onet.transition_index(a) for a in order}
    E = onet.n_transitions
    dur = windows.durations
    for T in range(windows.est[FINISH], K + 1):
        frontier = np.zeros((1, E), dtype=np.int64)
        for a in order:
            lo, hi = windows.est[a], T - dur[a]
            if hi < lo:
                frontier = frontier[:0]
                break
            steps = np.arange(lo, hi + 1)
            if frontier.shape[0] * steps.size > MAX_ORACLE_FRONTIER:
                raise OracleSizeError(f"oracle frontier exceeds {MAX_ORACLE_FRONTIER} rows")
            frontier = np.repeat(frontier, steps.size, axis=0)
            frontier[:, col[a]] = np.tile(steps, frontier.shape[0] // steps.size)
            frontier = frontier[simulate_batch(onet, frontier, K, partial=True)]
            if not frontier.shape[0]:
                break
        if not frontier.shape[0]:
            continue
        frontier[:, onet.finish_index] = T
        frontier = frontier[simulate_batch(onet, frontier, K)]
        if frontier.shape[0]:
            cols = [col[a] for a in net.ids]
            keys = frontier[:, cols[::-1]].T if cols else np.zeros((0, frontier.shape[0]))
            best = frontier[np.lexsort(keys)[0]] if cols else frontier[0]
            starts = {a: int(best[col[a]]) for a in net.ids}
            starts[FINISH] = T
            return Schedule(starts, T, OPTIMAL, "oracle")
    return Schedule({}, None, INFEASIBLE, "oracle")


@dataclass(frozen=True)
class EquivalenceReport:
    rcpsp: Schedule
    hfnmcf: Schedule
    equivalent: bool
    cross_checks: Mapping[str, bool]

    @property
    def objective(self) -> int | None:
        return self.rcpsp.objective


def _dump(net: ProjectNetwork, K: int, *schedules: Schedule) -> str:
    lines = [f"instance {net.name} horizon={K}"]
    for p in net.pools:
        lines.append(f"  pool {p.id} {p.kind.value} capacity={p.capacity}")
    for a in net.activities:
        lines.append(f"  activity {a.id} d={a.duration} demands={dict(a.demands)}")
    lines.append(f"  arcs {list(net.arcs)}")
    for s in schedules:
        lines.append(f"  {s.formulation}: status={s.status} objective={s.objective} starts={dict(s.starts)}")
    return "\n".join(lines)


def check_equivalence(net: ProjectNetwork, K: int | None = None, options: SolveOptions | None = None) -> EquivalenceReport:
    """Solve both formulations and lift each optimum into the other program."""
    K = default_horizon(net) if K is None else K
    programs = {}
    results = {}
    for form in (RCPSP, HFNMCF):
        try:
            programs[form] = build_program(net, form, K)
        except (InfeasibleError, InfeasibleHorizonError):
            programs[form] = None
            results[form] = Schedule({}, None, INFEASIBLE, form)
            continue
        results[form] = solve(programs[form], options)[0]
    r, h = results[RCPSP], results[HFNMCF]
    checks: dict[str, bool] = {"objective": r.objective == h.objective}
    if r.objective is not None and programs[HFNMCF] is not None:
        onet = programs[HFNMCF].metadata["operand_net"]
        traj = simulate(onet, FiringSchedule(dict(r.starts)), K)
        ev = evaluate(programs[HFNMCF], trajectory_assignment(programs[HFNMCF], traj))
        checks["rcpsp-in-hfnmcf"] = ev.feasible and ev.objective == r.objective
    if h.objective is not None and programs[RCPSP] is not None:
        ev = evaluate(programs[RCPSP], start_assignment(programs[RCPSP], h.starts))
        checks["hfnmcf-in-rcpsp"] = ev.feasible and ev.objective == h.objective
    if (r.objective is None) != (h.objective is None):
        checks["feasibility"] = False
    ok = all(checks.values())
    if not ok:
        failed = [k for k, v in checks.items() if not v]
        raise EquivalenceError(f"formulations disagree on {failed}", _dump(net, K, r, h))
    return EquivalenceReport(r, h, ok, checks)


__all__ = [
    "OPTIMAL",
    "FEASIBLE_ONLY",
    "INFEASIBLE",
    "Schedule",
    "SolveStats",
    "SolveOptions",
    "SearchLimitError",
    "OracleSizeError",
    "EquivalenceError",
    "CertificationError",
    "EquivalenceReport",
    "solve",
    "solve_network",
    "build_program",
    "brute_force",
    "check_equivalence",
    "certificate",
]
