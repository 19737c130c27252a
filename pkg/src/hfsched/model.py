"""Project network domain types and structural analyses.

Time is discrete with unit steps and 1-based indices.  An activity started
at step ``s`` with duration ``d`` occupies periods ``s .. s+d-1`` and its
completion is registered at step ``s+d``.  The dummy finish activity has no
duration, so it starts at ``makespan + 1``.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

START = "__start__"
FINISH = "__finish__"


class HfschedError(Exception):
    """Base class for library errors."""


class CycleError(HfschedError):
    def __init__(self, nodes: Iterable[str]):
        self.nodes = sorted(nodes)
        super().__init__(f"precedence cycle through: {', '.join(self.nodes)}")


class InfeasibleHorizonError(HfschedError):
    pass


class InfeasibleError(HfschedError):
    pass


class ValidationError(HfschedError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(str(v) for v in report.violations))


class OperandKind(str, enum.Enum):
    RENEWABLE = "renewable"
    NONRENEWABLE = "nonrenewable"

    @classmethod
    def parse(cls, text: str) -> "OperandKind":
        key = text.strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown operand kind {text!r}")


@dataclass(frozen=True)
class Activity:
    id: str
    duration: int
    demands: Mapping[str, int] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "demands", dict(sorted(self.demands.items())))
        if not self.label:
            object.__setattr__(self, "label", self.id)

    def demand(self, pool_id: str) -> int:
        return self.demands.get(pool_id, 0)

    def __hash__(self):
        return hash((self.id, self.duration, tuple(self.demands.items()), self.label))


@dataclass(frozen=True)
class OperandPool:
    id: str
    kind: OperandKind
    capacity: int


@dataclass(frozen=True)
class ProjectNetwork:
    """Activity-on-node project graph.

    ``activities`` excludes the dummy start and finish; they are implied by
    the sources and sinks of ``arcs``.  Each pool carries its own kind, so a
    network may mix renewable and non-renewable operands.
    """

    activities: tuple[Activity, ...]
    arcs: tuple[tuple[str, str], ...] = ()
    pools: tuple[OperandPool, ...] = ()
    name: str = "project"

    def __post_init__(self):
        object.__setattr__(self, "activities", tuple(self.activities))
        object.__setattr__(self, "arcs", tuple(tuple(a) for a in self.arcs))
        object.__setattr__(self, "pools", tuple(self.pools))

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.activities]

    def activity(self, activity_id: str) -> Activity:
        for a in self.activities:
            if a.id == activity_id:
                return a
        raise KeyError(activity_id)

    def pool(self, pool_id: str) -> OperandPool:
        for p in self.pools:
            if p.id == pool_id:
                return p
        raise KeyError(pool_id)

    def successors(self, activity_id: str) -> list[str]:
        return [j for i, j in self.arcs if i == activity_id]

    def predecessors(self, activity_id: str) -> list[str]:
        return [i for i, j in self.arcs if j == activity_id]

    @property
    def sources(self) -> list[str]:
        targets = {j for _, j in self.arcs}
        return [a.id for a in self.activities if a.id not in targets]

    @property
    def sinks(self) -> list[str]:
        origins = {i for i, _ in self.arcs}
        return [a.id for a in self.activities if a.id not in origins]

    @property
    def variant(self) -> str:
        kinds = {p.kind for p in self.pools}
        if len(kinds) == 1:
            return kinds.pop().value
        return "mixed" if kinds else OperandKind.RENEWABLE.value

    def total_duration(self) -> int:
        return sum(a.duration for a in self.activities)

    def total_demand(self, pool_id: str) -> int:
        return sum(a.demand(pool_id) for a in self.activities)

    def with_variant(self, kind: OperandKind) -> "ProjectNetwork":
        return replace(self, pools=tuple(replace(p, kind=kind) for p in self.pools))

    def with_capacities(self, capacities: Mapping[str, int]) -> "ProjectNetwork":
        unknown = set(capacities) - {p.id for p in self.pools}
        if unknown:
            raise KeyError(f"unknown pools: {sorted(unknown)}")
        return replace(
            self,
            pools=tuple(replace(p, capacity=capacities.get(p.id, p.capacity)) for p in self.pools),
        )


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    subject: tuple[str, ...] = ()

    def __str__(self):
        return f"{self.code}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def _find_cycle_nodes(ids: list[str], arcs: Iterable[tuple[str, str]]) -> set[str]:
    # Kahn's algorithm; whatever cannot be peeled off lies on or behind a cycle
    known = set(ids)
    succ: dict[str, list[str]] = {i: [] for i in ids}
    indeg = {i: 0 for i in ids}
    for i, j in arcs:
        if i in known and j in known:
            succ[i].append(j)
            indeg[j] += 1
    queue = [i for i in ids if indeg[i] == 0]
    while queue:
        i = queue.pop()
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    stuck = {i for i in ids if indeg[i] > 0}
    return {i for i in stuck if _reaches(i, i, succ)}


def _reaches(src: str, dst: str, succ: Mapping[str, list[str]]) -> bool:
    seen: set[str] = set()
    stack = list(succ[src])
    while stack:
        v = stack.pop()
        if v == dst:
            return True
        if v not in seen:
            seen.add(v)
            stack.extend(succ[v])
    return False


def validate_network(net: ProjectNetwork) -> ValidationReport:
    """Collect every violated structural invariant of ``net``.

    Never raises; an empty report means the network is valid.
    """
    out: list[Violation] = []
    ids = net.ids
    seen: set[str] = set()
    for a in net.activities:
        if a.id in seen:
            out.append(Violation("duplicate-activity", f"activity id {a.id!r} declared twice", (a.id,)))
        seen.add(a.id)
        if a.id in (START, FINISH):
            out.append(Violation("reserved-id", f"activity id {a.id!r} is reserved", (a.id,)))
        if a.duration < 0:
            out.append(Violation("negative-duration", f"{a.id} has duration {a.duration}", (a.id,)))
    pool_ids: set[str] = set()
    for p in net.pools:
        if p.id in pool_ids:
            out.append(Violation("duplicate-pool", f"pool id {p.id!r} declared twice", (p.id,)))
        pool_ids.add(p.id)
        if p.capacity < 0:
            out.append(Violation("negative-capacity", f"pool {p.id} has capacity {p.capacity}", (p.id,)))
    for a in net.activities:
        for pid, r in a.demands.items():
            if pid not in pool_ids:
                out.append(Violation("unknown-pool", f"{a.id} demands undeclared pool {pid!r}", (a.id, pid)))
                continue
            if r < 0:
                out.append(Violation("negative-demand", f"{a.id} demands {r} from {pid}", (a.id, pid)))
            elif r > net.pool(pid).capacity:
                out.append(
                    Violation(
                        "demand-exceeds-capacity",
                        f"{a.id} demands {r} from {pid} of capacity {net.pool(pid).capacity}",
                        (a.id, pid),
                    )
                )
    arc_seen: set[tuple[str, str]] = set()
    for i, j in net.arcs:
        if i not in seen or j not in seen:
            missing = [x for x in (i, j) if x not in seen]
            out.append(Violation("dangling-arc", f"arc {i}->{j} references unknown {missing}", (i, j)))
        if (i, j) in arc_seen:
            out.append(Violation("duplicate-arc", f"arc {i}->{j} declared twice", (i, j)))
        arc_seen.add((i, j))
    # self-loops are reported once, as cycles
    cyclic = _find_cycle_nodes(list(dict.fromkeys(ids)), arc_seen)
    if cyclic:
        out.append(Violation("cycle", f"precedence cycle through {sorted(cyclic)}", tuple(sorted(cyclic))))
    return ValidationReport(tuple(out))


def ensure_valid(net: ProjectNetwork) -> ProjectNetwork:
    report = validate_network(net)
    if not report.ok:
        raise ValidationError(report)
    return net


def topological_order(net: ProjectNetwork) -> list[str]:
    """Activity ids in precedence order, ties broken by smallest id."""
    ids = list(dict.fromkeys(net.ids))
    succ: dict[str, list[str]] = {i: [] for i in ids}
    indeg = {i: 0 for i in ids}
    for i, j in dict.fromkeys(net.arcs):
        if i in succ and j in succ:
            succ[i].append(j)
            indeg[j] += 1
    heap = [i for i in ids if indeg[i] == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != len(ids):
        left = set(ids) - set(order)
        raise CycleError({i for i in left if _reaches(i, i, succ)})
    return order


@dataclass(frozen=True)
class TimeWindows:
    """Start windows from a capacity-free forward/backward pass.

    Keys include the real activities and ``FINISH``.  ``horizon`` is the last
    step at which any transition may start or complete.
    """

    est: Mapping[str, int]
    lst: Mapping[str, int]
    durations: Mapping[str, int]
    horizon: int

    def eft(self, activity_id: str) -> int:
        return self.est[activity_id] + self.durations[activity_id]

    def lft(self, activity_id: str) -> int:
        return self.lst[activity_id] + self.durations[activity_id]

    def window(self, activity_id: str) -> range:
        return range(self.est[activity_id], self.lst[activity_id] + 1)

    @property
    def makespan_bound(self) -> int:
        return self.est[FINISH] - 1

    def slack(self, activity_id: str) -> int:
        return self.lst[activity_id] - self.est[activity_id]


def default_horizon(net: ProjectNetwork) -> int:
    # a fully serial schedule finishes by sum(d); the finish transition needs one more step
    return net.total_duration() + 1


def critical_path_windows(net: ProjectNetwork, horizon: int | None = None) -> TimeWindows:
    order = topological_order(net)
    dur = {a.id: a.duration for a in net.activities}
    dur[FINISH] = 0
    preds: dict[str, list[str]] = {i: [] for i in order}
    succs: dict[str, list[str]] = {i: [] for i in order}
    for i, j in dict.fromkeys(net.arcs):
        preds[j].append(i)
        succs[i].append(j)
    est: dict[str, int] = {}
    for i in order:
        est[i] = max((est[p] + dur[p] for p in preds[i]), default=1)
    est[FINISH] = max((est[i] + dur[i] for i in order), default=1)
    K = default_horizon(net) if horizon is None else horizon
    if K < est[FINISH]:
        raise InfeasibleHorizonError(
            f"horizon {K} is shorter than the critical path: the finish cannot start before step {est[FINISH]}"
        )
    lst: dict[str, int] = {FINISH: K}
    for i in reversed(order):
        lst[i] = min((lst[j] for j in succs[i]), default=K) - dur[i]
    return TimeWindows(est=est, lst=lst, durations=dur, horizon=K)
