"""Discrete-time execution of an operand net.

Array convention: column ``c`` of a firing matrix is time step ``k = c + 1``.
Place markings carry one extra column, so ``q_s[:, c]`` is the marking
*before* step ``c + 1`` and ``q_s[:, K]`` is the final marking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import FINISH, HfschedError
from .transform import OperandNet, required_final_marking


@dataclass(frozen=True)
class FeasibilityViolation:
    reason: str  # negative-marking | final-marking | horizon | unscheduled
    step: int | None = None
    place: str | None = None
    deficit: int = 0
    transition: str | None = None

    def __str__(self):
        parts = [self.reason]
        if self.step is not None:
            parts.append(f"k={self.step}")
        if self.place is not None:
            parts.append(f"place={self.place}")
        if self.transition is not None:
            parts.append(f"transition={self.transition}")
        if self.deficit:
            parts.append(f"deficit={self.deficit}")
        return " ".join(parts)


class ScheduleViolation(HfschedError):
    def __init__(self, violation: FeasibilityViolation):
        self.violation = violation
        super().__init__(str(violation))


class ConsistencyError(HfschedError):
    pass


@dataclass(frozen=True)
class FiringSchedule:
    """Start step per transition; missing transitions never fire."""

    starts: Mapping[str, int]

    @classmethod
    def from_activity_starts(cls, net: OperandNet, starts: Mapping[str, int]) -> "FiringSchedule":
        """Complete ``starts`` with the earliest possible finish firing."""
        s = dict(starts)
        if FINISH not in s:
            d = dict(zip(net.transitions, net.durations.tolist()))
            s[FINISH] = max((s[a] + d[a] for a in net.activity_ids if a in s), default=1)
        return cls(s)

    def finish_times(self, net: OperandNet) -> dict[str, int]:
        d = dict(zip(net.transitions, net.durations.tolist()))
        return {t: k + d[t] for t, k in self.starts.items()}

    def firing_matrices(self, net: OperandNet, K: int) -> tuple[np.ndarray, np.ndarray]:
        E = net.n_transitions
        um = np.zeros((E, K), dtype=np.int64)
        up = np.zeros((E, K), dtype=np.int64)
        for t, k in self.starts.items():
            n = net.transition_index(t)
            um[n, k - 1] = 1
            up[n, k + int(net.durations[n]) - 1] = 1
        return um, up


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    net: OperandNet
    q_s: np.ndarray  # |S| x (K+1)
    q_e: np.ndarray  # |E| x (K+1)
    u_minus: np.ndarray  # |E| x K
    u_plus: np.ndarray  # |E| x K

    @property
    def horizon(self) -> int:
        return self.u_minus.shape[1]

    @property
    def ongoing(self) -> np.ndarray:
        """|E| x K indicator; column k-1 is 1 while a transition runs during period k."""
        return self.q_e[:, 1:]

    def starts(self) -> dict[str, int]:
        return _first_steps(self.net, self.u_minus)

    def completions(self) -> dict[str, int]:
        return _first_steps(self.net, self.u_plus)

    def place_row(self, name: str) -> np.ndarray:
        return self.q_s[self.net.place_index(name)]


def _first_steps(net: OperandNet, u: np.ndarray) -> dict[str, int]:
    out = {}
    for n, t in enumerate(net.transitions):
        hits = np.flatnonzero(u[n])
        if hits.size:
            out[t] = int(hits[0]) + 1
    return out


def reconstruct_transition_marking(u_minus: np.ndarray, u_plus: np.ndarray) -> np.ndarray:
    """Integrate the transition-marking recurrence from an all-idle start."""
    u_minus = np.asarray(u_minus, dtype=np.int64)
    u_plus = np.asarray(u_plus, dtype=np.int64)
    if u_minus.shape != u_plus.shape:
        raise ConsistencyError(f"firing matrices differ in shape: {u_minus.shape} vs {u_plus.shape}")
    E, K = u_minus.shape
    q_e = np.zeros((E, K + 1), dtype=np.int64)
    q_e[:, 1:] = np.cumsum(u_minus - u_plus, axis=1)
    if (q_e < 0).any():
        t, c = np.argwhere(q_e < 0)[0]
        raise ConsistencyError(f"transition {t} completes before it starts (step {c})")
    return q_e


def check_schedule(net: OperandNet, schedule: FiringSchedule, K: int, *, partial: bool = False):
    """Return the first violation of ``schedule`` or ``None``.

    With ``partial`` the final-marking check is skipped, so a prefix of a
    schedule can be tested for token deficits on its own.
    """
    try:
        simulate(net, schedule, K, partial=partial)
    except ScheduleViolation as exc:
        return exc.violation
    return None


def simulate(net: OperandNet, schedule: FiringSchedule, K: int, *, partial: bool = False) -> StateTrajectory:
    for t, k in schedule.starts.items():
        if t not in net.transitions:
            raise KeyError(f"unknown transition {t!r}")
        end = k + int(net.durations[net.transition_index(t)])
        if k < 1 or end > K:
            raise ScheduleViolation(FeasibilityViolation("horizon", step=k, transition=t))
    um, up = schedule.firing_matrices(net, K)
    S = net.n_places
    q_s = np.zeros((S, K + 1), dtype=np.int64)
    q_s[:, 0] = net.initial_marking
    for c in range(K):
        q_s[:, c + 1] = q_s[:, c] + net.m_plus @ up[:, c] - net.m_minus @ um[:, c]
        neg = np.flatnonzero(q_s[:, c + 1] < 0)
        if neg.size:
            p = int(neg[0])
            raise ScheduleViolation(
                FeasibilityViolation("negative-marking", step=c + 1, place=net.places[p], deficit=int(-q_s[p, c + 1]))
            )
    if not partial:
        missing = [t for t in net.transitions if t not in schedule.starts]
        if missing:
            raise ScheduleViolation(FeasibilityViolation("unscheduled", transition=missing[0]))
        final = required_final_marking(net)
        diff = np.flatnonzero(q_s[:, K] != final)
        if diff.size:
            p = int(diff[0])
            raise ScheduleViolation(
                FeasibilityViolation(
                    "final-marking", step=K + 1, place=net.places[p], deficit=int(final[p] - q_s[p, K])
                )
            )
    q_e = reconstruct_transition_marking(um, up)
    return StateTrajectory(net=net, q_s=q_s, q_e=q_e, u_minus=um, u_plus=up)


def simulate_batch(net: OperandNet, starts: np.ndarray, K: int, *, partial: bool = False) -> np.ndarray:
    """Feasibility of many schedules at once.

    ``starts`` is ``B x |E|`` (columns in transition order).  Same semantics as
    :func:`simulate`, vectorised over the batch; returns a boolean mask.  With
    ``partial`` a zero entry means "not scheduled" and the final marking is
    not checked.
    """
    starts = np.asarray(starts, dtype=np.int64)
    B = starts.shape[0]
    ends = starts + net.durations[None, :]
    placed = starts >= 1 if partial else np.ones_like(starts, dtype=bool)
    ends = np.where(placed, ends, 0)
    ok = ((starts >= 1) | ~placed).all(axis=1) & (ends <= K).all(axis=1)
    mp = net.m_plus.T.astype(np.float64)
    mm = net.m_minus.T.astype(np.float64)
    q = np.tile(net.initial_marking.astype(np.float64), (B, 1))
    for k in range(1, K + 1):
        q += (ends == k).astype(np.float64) @ mp - (starts == k).astype(np.float64) @ mm
        ok &= (q >= 0).all(axis=1)
    if not partial:
        ok &= (q == required_final_marking(net)[None, :]).all(axis=1)
    return ok


@dataclass(frozen=True)
class UsageTable:
    pool_ids: tuple[str, ...]
    per_period: np.ndarray  # pools x K, units held during period k
    cumulative: np.ndarray  # pools x K, units handed out by the end of period k

    def row(self, pool_id: str) -> tuple[list[int], list[int]]:
        n = self.pool_ids.index(pool_id)
        return self.per_period[n].tolist(), self.cumulative[n].tolist()


def per_period_usage(trajectory: StateTrajectory, net: OperandNet | None = None) -> UsageTable:
    net = net or trajectory.net
    demand = net.m_minus[net.pool_rows]  # pools x E
    per_period = demand @ trajectory.ongoing
    cumulative = np.cumsum(demand @ trajectory.u_minus, axis=1)
    return UsageTable(pool_ids=net.pool_ids, per_period=per_period, cumulative=cumulative)
