"""Evaluation metrics over simulation reports and their CSV files."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .cluster import COMPLETED, EVICTED, SimulationReport
from .policy import hour_of_day

DEFAULT_P_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0)
LENGTH_BIN_MINUTES = 15
MAX_LENGTH_MINUTES = 8 * 60


class EmptyReportError(ValueError):
    pass


@dataclass(frozen=True)
class SuccessSummary:
    policy: str
    P_grid: tuple[float, ...]
    counts: tuple[int, ...]
    total: int

    def count_at(self, P: float) -> int:
        return self.counts[self.P_grid.index(P)]

    def rows(self):
        for P, c in zip(self.P_grid, self.counts):
            yield {"P": P, "count": c, "total": self.total, "policy": self.policy}


@dataclass(frozen=True)
class HeatmapCell:
    length_bin: int  # lower edge, minutes; the bin is (lower, lower + width]
    hour: int
    probability: float | None  # None when the cell has no samples
    samples: int


@dataclass(frozen=True)
class EnergySummary:
    policy: str
    good_wh: Fraction
    bad_wh: Fraction
    idle_wh: Fraction

    @property
    def total_wh(self) -> Fraction:
        return self.good_wh + self.bad_wh

    def mwh(self, which: str = "total") -> float:
        return float(getattr(self, f"{which}_wh")) / 1e6

    @property
    def bad_fraction(self) -> float:
        return float(self.bad_wh / self.total_wh) if self.total_wh else 0.0


def success_counts(report: SimulationReport, P_grid: Sequence[float] = DEFAULT_P_GRID) -> SuccessSummary:
    """Workflows with p(W) <= P for each P; incomplete workflows never count."""
    grid = tuple(float(p) for p in P_grid)
    counts = tuple(sum(w.succeeded_within(P) for w in report.workflows) for P in grid)
    return SuccessSummary(report.policy, grid, counts, len(report.workflows))


def p_cdf(report: SimulationReport) -> list[tuple[float, float]]:
    """Empirical CDF of p(W) over completed workflows, one point per distinct value."""
    ps = sorted(w.excess_proportion for w in report.workflows if w.completed)
    if not ps:
        raise EmptyReportError("no completed workflows")
    n = len(ps)
    counts = Counter(ps)
    out, seen = [], 0
    for p in sorted(counts):
        seen += counts[p]
        out.append((p, seen / n))
    return out


def length_bin(length_seconds: int, width: int = LENGTH_BIN_MINUTES,
               max_minutes: int = MAX_LENGTH_MINUTES) -> int:
    """Lower edge (minutes) of the right-closed bin holding ``length_seconds``."""
    nbins = max_minutes // width
    i = max(0, math.ceil(Fraction(length_seconds, 60) / width) - 1)
    return min(i, nbins - 1) * width


def heatmap(report: SimulationReport, width: int = LENGTH_BIN_MINUTES,
            max_minutes: int = MAX_LENGTH_MINUTES) -> list[HeatmapCell]:
    """Share of invocations finishing without eviction, by task length and submit hour.

    Cancelled and horizon-truncated invocations are left out: their fate is
    unknown.
    """
    ok: Counter = Counter()
    seen: Counter = Counter()
    for inv in report.invocations:
        if inv.outcome not in (COMPLETED, EVICTED):
            continue
        key = (length_bin(inv.length, width, max_minutes), hour_of_day(inv.submit))
        seen[key] += 1
        ok[key] += inv.outcome == COMPLETED
    cells = []
    for lb in range(0, max_minutes, width):
        for h in range(24):
            n = seen[(lb, h)]
            cells.append(HeatmapCell(lb, h, ok[(lb, h)] / n if n else None, n))
    return cells


def pooled_probability(cells: Sequence[HeatmapCell], hour: int, min_length_bin: int) -> float | None:
    """Pooled completion probability over cells at ``hour`` with length_bin >= min_length_bin."""
    n = ok = 0
    for c in cells:
        if c.hour == hour and c.length_bin >= min_length_bin and c.samples:
            n += c.samples
            ok += round(c.probability * c.samples)
    return ok / n if n else None


def energy_summary(report: SimulationReport, scope: str = "workflow") -> EnergySummary:
    led = report.ledger
    return EnergySummary(report.policy, led.good_total(scope), led.bad_total(scope), led.idle)


def percent_change(base: Fraction, other: Fraction) -> float:
    """Signed percentage change going from ``base`` to ``other``."""
    if base == 0:
        return 0.0 if other == 0 else math.inf
    return float((other - base) / base * 100)


def compare_energy(base: EnergySummary, other: EnergySummary) -> dict:
    return {
        "base": base.policy,
        "other": other.policy,
        "total_pct": percent_change(base.total_wh, other.total_wh),
        "bad_pct": percent_change(base.bad_wh, other.bad_wh),
        "good_pct": percent_change(base.good_wh, other.good_wh),
    }


# --- CSV ------------------------------------------------------------------------------

def _write(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, Fraction):
        x = float(x)
    return repr(x) if isinstance(x, float) else str(x)


def write_success(summaries: Sequence[SuccessSummary], path: Path) -> None:
    _write(path, ["P", "count", "total", "policy"],
           ([_num(r["P"]), r["count"], r["total"], r["policy"]] for s in summaries for r in s.rows()))


def write_cdf(points: Sequence[tuple[float, float]], path: Path) -> None:
    _write(path, ["p", "fraction"], ([_num(p), _num(f)] for p, f in points))


def write_heatmap(cells: Sequence[HeatmapCell], path: Path) -> None:
    _write(path, ["length_bin", "hour", "probability", "samples"],
           ([c.length_bin, c.hour, _num(c.probability), c.samples] for c in cells))


def write_energy(summaries: Sequence[EnergySummary], path: Path) -> None:
    _write(path, ["policy", "good_wh", "bad_wh", "idle_wh"],
           ([s.policy, _num(s.good_wh), _num(s.bad_wh), _num(s.idle_wh)] for s in summaries))


def write_invocations(report: SimulationReport, path: Path) -> None:
    _write(path, ["workflow_id", "task_id", "replica", "invocation", "resource_id", "submit",
                  "start", "end", "tau", "outcome", "good", "energy_wh"],
           ([i.workflow_id, i.task_id, i.replica, i.attempt, i.resource, i.submit, i.start,
             i.end, i.tau, i.outcome, int(i.good), _num(i.energy)] for i in report.invocations))


def write_workflows(report: SimulationReport, path: Path) -> None:
    _write(path, ["workflow_id", "submit_time", "completion_time", "critical_path", "deadline",
                  "p"],
           ([w.workflow_id, w.submit_time, _num(w.completion_time), w.critical_path,
             _num(float(w.deadline)), _num(w.excess_proportion)] for w in report.workflows))


def write_decisions(report: SimulationReport, path: Path) -> None:
    def flag(b):
        return "" if b is None else int(b)

    _write(path, ["workflow_id", "task_id", "time", "phi_prime", "hour", "phi_bin", "action",
                  "reward", "sigma", "succeeded"],
           ([d.workflow_id, d.task_id, d.time, _num(float(d.phi_prime)), d.state.hour,
             d.state.phi_bin, d.action, _num(d.reward), _num(d.sigma), flag(d.succeeded)]
            for d in report.decisions))

