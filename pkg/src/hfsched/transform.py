"""AoN network -> activity diagram -> operand net.

The activity diagram is kept as a plain node/flow structure; only the parts
needed to derive the operand net are modelled (no SysML rendering).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .model import (
    FINISH,
    InfeasibleError,
    OperandKind,
    ProjectNetwork,
    ensure_valid,
)

PROJECT_START = ("initial", "Project Start")
FINISH_PROJECT = ("action", FINISH)
TERMINAL = ("terminal", "Terminal")

BLACK = "black"
RED = "red"


def action(activity_id: str) -> tuple[str, str]:
    return ("action", activity_id)


def pool_buffer(pool_id: str) -> tuple[str, str]:
    return ("pool", pool_id)


def completion_buffer(activity_id: str) -> tuple[str, str]:
    return ("done", activity_id)


@dataclass(frozen=True)
class Flow:
    source: tuple[str, str]
    target: tuple[str, str]
    weight: int
    color: str = BLACK
    control: bool = False


@dataclass(frozen=True)
class ActivityDiagram:
    actions: tuple[str, ...]  # activity ids, FINISH last
    pool_buffers: tuple[tuple[str, int, OperandKind], ...]  # (id, capacity, kind)
    completion_buffers: tuple[str, ...]
    flows: tuple[Flow, ...]
    durations: dict = field(default_factory=dict)

    @property
    def object_flows(self) -> list[Flow]:
        return [f for f in self.flows if not f.control]

    @property
    def control_flows(self) -> list[Flow]:
        return [f for f in self.flows if f.control]

    @property
    def red_flows(self) -> list[Flow]:
        return [f for f in self.flows if f.color == RED]

    def flows_from(self, node) -> list[Flow]:
        return [f for f in self.flows if f.source == node]

    def flows_to(self, node) -> list[Flow]:
        return [f for f in self.flows if f.target == node]


def aon_to_act(net: ProjectNetwork) -> ActivityDiagram:
    ensure_valid(net)
    flows: list[Flow] = [Flow(FINISH_PROJECT, TERMINAL, 1, control=True)]
    for a in net.activities:
        # sinks hand one token to the finish action, so they count it as a successor
        n_succ = max(len(net.successors(a.id)), 1)
        flows.append(Flow(action(a.id), completion_buffer(a.id), n_succ))
        for p in net.pools:
            r = a.demand(p.id)
            if r:
                flows.append(Flow(pool_buffer(p.id), action(a.id), r))
        for p in net.pools:
            r = a.demand(p.id)
            if r and p.kind is OperandKind.RENEWABLE:
                flows.append(Flow(action(a.id), pool_buffer(p.id), r, color=RED))
    for i, j in net.arcs:
        flows.append(Flow(completion_buffer(i), action(j), 1))
    for aid in net.sources:
        flows.append(Flow(PROJECT_START, action(aid), 1, control=True))
    for aid in net.sinks:
        flows.append(Flow(completion_buffer(aid), FINISH_PROJECT, 1, control=True))
    if not net.activities:
        # nothing to run; keep the start token consumable
        flows.append(Flow(PROJECT_START, FINISH_PROJECT, 1, control=True))
    durations = {a.id: a.duration for a in net.activities}
    durations[FINISH] = 0
    return ActivityDiagram(
        actions=tuple(net.ids) + (FINISH,),
        pool_buffers=tuple((p.id, p.capacity, p.kind) for p in net.pools),
        completion_buffers=tuple(net.ids),
        flows=tuple(flows),
        durations=durations,
    )


@dataclass(frozen=True, eq=False)
class OperandNet:
    """Operand Petri net with signed incidence split into M+ and M-.

    Places are ordered ``start; pools; completion buffers`` and transitions
    ``activities; finish``.  ``red`` flags the M+ entries that return
    renewable operands.
    """

    places: tuple[str, ...]
    transitions: tuple[str, ...]
    m_plus: np.ndarray
    m_minus: np.ndarray
    red: np.ndarray
    durations: np.ndarray
    initial_marking: np.ndarray
    pool_ids: tuple[str, ...]
    pool_kinds: tuple[OperandKind, ...]
    activity_ids: tuple[str, ...]

    @property
    def n_places(self) -> int:
        return len(self.places)

    @property
    def n_transitions(self) -> int:
        return len(self.transitions)

    @property
    def incidence(self) -> np.ndarray:
        return self.m_plus - self.m_minus

    @property
    def pool_rows(self) -> slice:
        return slice(1, 1 + len(self.pool_ids))

    @property
    def completion_rows(self) -> slice:
        return slice(1 + len(self.pool_ids), self.n_places)

    @property
    def finish_index(self) -> int:
        return self.n_transitions - 1

    def place_index(self, name: str) -> int:
        return self.places.index(name)

    def transition_index(self, name: str) -> int:
        return self.transitions.index(name)

    def completion_place(self, activity_id: str) -> int:
        return self.places.index(place_name(completion_buffer(activity_id)))

    def pool_place(self, pool_id: str) -> int:
        return self.places.index(place_name(pool_buffer(pool_id)))


def place_name(node: tuple[str, str]) -> str:
    kind, ident = node
    if kind == "initial":
        return "start"
    if kind == "pool":
        return f"pool:{ident}"
    return f"done:{ident}"


def act_to_operand_net(act: ActivityDiagram) -> OperandNet:
    place_nodes = (
        [PROJECT_START]
        + [pool_buffer(pid) for pid, _, _ in act.pool_buffers]
        + [completion_buffer(aid) for aid in act.completion_buffers]
    )
    p_index = {node: n for n, node in enumerate(place_nodes)}
    t_index = {action(aid): n for n, aid in enumerate(act.actions)}
    S, E = len(place_nodes), len(act.actions)
    m_plus = np.zeros((S, E), dtype=np.int64)
    m_minus = np.zeros((S, E), dtype=np.int64)
    red = np.zeros((S, E), dtype=bool)
    for f in act.flows:
        if f.target == TERMINAL:
            continue
        if f.source in p_index:
            m_minus[p_index[f.source], t_index[f.target]] += f.weight
        else:
            row, col = p_index[f.target], t_index[f.source]
            m_plus[row, col] += f.weight
            if f.color == RED:
                red[row, col] = True
    q0 = np.zeros(S, dtype=np.int64)
    q0[0] = len(act.flows_from(PROJECT_START))
    for n, (_, cap, _) in enumerate(act.pool_buffers):
        q0[1 + n] = cap
    return OperandNet(
        places=tuple(place_name(n) for n in place_nodes),
        transitions=tuple(act.actions),
        m_plus=m_plus,
        m_minus=m_minus,
        red=red,
        durations=np.array([act.durations[a] for a in act.actions], dtype=np.int64),
        initial_marking=q0,
        pool_ids=tuple(pid for pid, _, _ in act.pool_buffers),
        pool_kinds=tuple(kind for _, _, kind in act.pool_buffers),
        activity_ids=tuple(act.completion_buffers),
    )


def build_operand_net(net: ProjectNetwork) -> OperandNet:
    return act_to_operand_net(aon_to_act(net))


def required_final_marking(net: OperandNet) -> np.ndarray:
    """Marking every complete execution must end in.

    Renewable pools return to capacity; non-renewable pools keep whatever the
    activities did not consume.
    """
    q = np.zeros(net.n_places, dtype=np.int64)
    for n, kind in enumerate(net.pool_kinds):
        row = 1 + n
        cap = int(net.initial_marking[row])
        if kind is OperandKind.RENEWABLE:
            q[row] = cap
        else:
            used = int(net.m_minus[row].sum())
            if used > cap:
                raise InfeasibleError(
                    f"pool {net.pool_ids[n]!r}: total demand {used} exceeds capacity {cap}"
                )
            q[row] = cap - used
    return q


def to_dot(net: OperandNet) -> str:
    """Graphviz description: places as circles, transitions as boxes."""
    lines = ["digraph operand_net {", "  rankdir=LR;"]
    for n, p in enumerate(net.places):
        lines.append(f'  "{p}" [shape=circle, label="{p}\\n{int(net.initial_marking[n])}"];')
    for n, t in enumerate(net.transitions):
        label = "fin" if t == FINISH else t
        lines.append(f'  "t:{t}" [shape=box, label="{label}\\nd={int(net.durations[n])}"];')
    for s, t in zip(*np.nonzero(net.m_minus)):
        lines.append(f'  "{net.places[s]}" -> "t:{net.transitions[t]}" [label={int(net.m_minus[s, t])}, color=black];')
    for s, t in zip(*np.nonzero(net.m_plus)):
        color = RED if net.red[s, t] else BLACK
        lines.append(f'  "t:{net.transitions[t]}" -> "{net.places[s]}" [label={int(net.m_plus[s, t])}, color={color}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def describe(net: OperandNet) -> str:
    """Plain-text dump of places, transitions and both incidence matrices."""

    def fmt(matrix: np.ndarray, mask: np.ndarray | None = None) -> Iterable[str]:
        for s, row in enumerate(matrix):
            cells = []
            for t, v in enumerate(row):
                cells.append(f"{int(v)}{'r' if mask is not None and mask[s, t] else ''}")
            yield f"  {net.places[s]:<16} " + " ".join(f"{c:>4}" for c in cells)

    names = ["fin" if t == FINISH else t for t in net.transitions]
    header = "  " + " " * 16 + " " + " ".join(f"{n:>4}" for n in names)
    out = [
        f"places {net.n_places}",
        f"transitions {net.n_transitions}",
        "durations " + " ".join(str(int(d)) for d in net.durations),
        "initial " + " ".join(str(int(q)) for q in net.initial_marking),
        "M+ (r = renewable return)",
        header,
        *fmt(net.m_plus, net.red),
        "M-",
        header,
        *fmt(net.m_minus),
    ]
    return "\n".join(out) + "\n"
