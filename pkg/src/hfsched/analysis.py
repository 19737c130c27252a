"""Post-solve analytics over an explicit project state."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np

from .model import FINISH, ProjectNetwork
from .simulate import StateTrajectory, per_period_usage
from .transform import completion_buffer, place_name


class SlackMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SlackReport:
    arcs: Mapping[tuple[str, str], int]  # waiting periods between i finishing and j starting
    holding: Mapping[tuple[str, str], int]  # same quantity read off the firing history
    held_steps: Mapping[str, int]  # steps a completion place is non-empty
    token_steps: Mapping[str, int]  # sum of its marking over the horizon

    @property
    def waiting_places(self) -> list[str]:
        return [p for p, n in self.held_steps.items() if n]

    def nonzero(self) -> dict[tuple[str, str], int]:
        return {a: t for a, t in self.arcs.items() if t}

    def render(self) -> str:
        lines = ["arc                 wait"]
        for (i, j), t in self.arcs.items():
            lines.append(f"{_label(i):>8} -> {_label(j):<8} {t:>4}")
        lines.append("place               held  token-steps")
        for p, n in self.held_steps.items():
            lines.append(f"{p:<18} {n:>5}  {self.token_steps[p]:>11}")
        return "\n".join(lines) + "\n"


def _label(entity: str) -> str:
    return "fin" if entity == FINISH else entity


def slack_times(starts: Mapping[str, int], net: ProjectNetwork, trajectory: StateTrajectory) -> SlackReport:
    """Waiting time on every precedence arc (sinks wait on the finish).

    Each arc slack is computed twice, once from the start times and once from
    the firing history, and the completion-place markings must account for
    exactly the summed slack of the place's outgoing arcs.
    """
    dur = {a.id: a.duration for a in net.activities}
    arcs = list(dict.fromkeys(net.arcs)) + [(s, FINISH) for s in net.sinks]
    fin = dict(starts)
    if FINISH not in fin:
        fin[FINISH] = trajectory.starts()[FINISH]
    slack = {(i, j): fin[j] - fin[i] - dur[i] for i, j in arcs}
    first_start = trajectory.starts()
    first_done = trajectory.completions()
    holding = {(i, j): first_start[j] - first_done[i] for i, j in arcs}
    if holding != slack:
        bad = {a: (slack[a], holding[a]) for a in arcs if slack[a] != holding[a]}
        raise SlackMismatchError(f"start times and firing history disagree: {bad}")
    held, tokens = {}, {}
    for a in net.ids:
        row = trajectory.place_row(place_name(completion_buffer(a)))
        name = place_name(completion_buffer(a))
        held[name] = int(np.count_nonzero(row))
        tokens[name] = int(row.sum())
        expected = sum(t for (i, _), t in slack.items() if i == a)
        if tokens[name] != expected:
            raise SlackMismatchError(f"{name} holds {tokens[name]} token-steps, arcs wait {expected}")
    return SlackReport(slack, holding, held, tokens)


@dataclass(frozen=True)
class EarnedValueReport:
    as_of: int
    earned: Fraction
    planned: Fraction
    values: Mapping[str, Fraction]

    @property
    def sv(self) -> Fraction:
        return self.earned - self.planned

    @property
    def spi(self) -> Fraction | None:
        # None when nothing was planned to be complete yet
        return None if self.planned == 0 else self.earned / self.planned

    def render(self) -> str:
        spi = "undefined" if self.spi is None else _num(self.spi)
        return (
            f"as_of {self.as_of}\nEV {_num(self.earned)}\nPV {_num(self.planned)}\n"
            f"SV {_num(self.sv)}\nSPI {spi}\n"
        )


def _num(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator} ({float(x):.4f})"


def unit_values(net_or_ids) -> dict[str, Fraction]:
    ids = net_or_ids.ids if isinstance(net_or_ids, ProjectNetwork) else list(net_or_ids)
    return {a: Fraction(1) for a in ids}


def _accrued(trajectory: StateTrajectory, values: Mapping[str, Fraction], k: int) -> Fraction:
    cols = min(max(k, 0), trajectory.horizon)
    done = trajectory.u_plus[:, :cols].sum(axis=1)
    total = Fraction(0)
    for n, t in enumerate(trajectory.net.transitions):
        if t in values and done[n]:
            total += values[t] * int(done[n])
    return total


def earned_value(planned: StateTrajectory, actual: StateTrajectory, values: Mapping[str, object], as_of: int) -> EarnedValueReport:
    """Completion-accrued EV, PV, SV and SPI at step ``as_of``."""
    if planned.net.transitions != actual.net.transitions:
        raise ValueError("planned and actual trajectories belong to different nets")
    vals = {a: Fraction(v) for a, v in values.items()}
    neg = [a for a, v in vals.items() if v < 0]
    if neg:
        raise ValueError(f"negative values for {neg}")
    return EarnedValueReport(as_of, _accrued(actual, vals, as_of), _accrued(planned, vals, as_of), vals)


@dataclass(frozen=True)
class ScheduleTable:
    pool_id: str
    activities: tuple[str, ...]
    cells: Mapping[str, tuple]  # activity -> per column demand or None
    spans: Mapping[str, tuple[int, int]]  # activity -> (start, completion step)
    per_period: tuple[int, ...]
    cumulative: tuple[int, ...]

    @property
    def columns(self) -> range:
        return range(len(self.per_period))

    def completion_steps(self) -> dict[str, int]:
        return {a: end for a, (_, end) in self.spans.items()}

    def rows(self) -> list[list[str]]:
        head = ["Activity"] + [str(c) for c in self.columns]
        out = [head]
        for a in self.activities:
            out.append([a] + ["" if v is None else str(v) for v in self.cells[a]])
        out.append(["Per period"] + [str(v) for v in self.per_period])
        out.append(["Cumulative"] + [str(v) for v in self.cumulative])
        return out

    def to_text(self) -> str:
        rows = self.rows()
        width = max(len(c) for r in rows for c in r[1:]) if len(rows[0]) > 1 else 1
        first = max(len(r[0]) for r in rows)
        lines = [f"pool {self.pool_id}" if self.pool_id else "no pools"]
        for n, r in enumerate(rows):
            lines.append(r[0].ljust(first) + " |" + "".join(f" {c:>{width}}" for c in r[1:]))
            if n == 0 or n == len(self.activities):
                lines.append("-" * len(lines[-1]))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r in self.rows():
            w.writerow(([self.pool_id] if self.pool_id else [""]) + r)
        return buf.getvalue()


def schedule_table(trajectory: StateTrajectory, net: ProjectNetwork) -> list[ScheduleTable]:
    """One Gantt-style table per pool, columns 0 .. makespan.

    Column 0 is the instant before the first period and is always empty.
    """
    onet = trajectory.net
    starts = trajectory.starts()
    makespan = starts.get(FINISH, 1) - 1
    ncol = makespan + 1
    usage = per_period_usage(trajectory, onet)
    spans = {a.id: (starts[a.id], starts[a.id] + a.duration) for a in net.activities if a.id in starts}
    pools = [p.id for p in net.pools] or [""]
    tables = []
    for pid in pools:
        cells = {}
        for a in net.activities:
            row: list = [None] * ncol
            r = a.demand(pid) if pid else 0
            if r and a.id in spans:
                s, e = spans[a.id]
                for k in range(s, e):
                    row[k] = r
            cells[a.id] = tuple(row)
        if pid:
            per, cum = usage.row(pid)
            per_period = (0, *per[:makespan])
            cumulative = (0, *cum[:makespan])
        else:
            per_period = cumulative = (0,) * ncol
        tables.append(ScheduleTable(pid, tuple(net.ids), cells, spans, per_period, cumulative))
    return tables
