"""Synthetic interactive-user and HTC task traces with injected workflows."""

from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cluster import DAY, HOUR, MalformedTraceError, Session, TraceRow
from .workflow import (
    TaskSpec, WorkflowError, WorkflowSpec, augment_and_validate, eight_task_workflow, load_workflow,
)

# login rate per resource per hour, by hour of day: quiet overnight, busy 10-18,
# tailing off to midnight
DEFAULT_LOGIN_PROFILE = (
    0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.03, 0.05,
    0.10, 0.20, 0.30, 0.30, 0.30, 0.30, 0.30, 0.30,
    0.30, 0.30, 0.20, 0.15, 0.10, 0.07, 0.05, 0.03,
)

# relative HTC submission intensity by hour of day
DEFAULT_SUBMIT_PROFILE = (
    0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.4, 0.6,
    0.8, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
    1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3,
)

TEMPLATES = ("eight_task", "montage_like", "file")


class WidthTooSmallError(WorkflowError):
    pass


@dataclass
class WorkloadConfig:
    resource_count: int = 200
    days: float = 14
    task_count: int = 14000
    workflow_fraction: float = 0.1
    workflow_template: str = "eight_task"
    template_params: dict = field(default_factory=dict)
    login_profile: Sequence[float] = DEFAULT_LOGIN_PROFILE
    session_median_minutes: float = 60.0
    session_sigma: float = 0.8
    submit_profile: Sequence[float] = DEFAULT_SUBMIT_PROFILE
    duration_median_minutes: float = 30.0
    duration_sigma: float = 1.0
    start_time: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.workflow_fraction <= 1:
            raise ValueError("workflow_fraction must lie in [0, 1]")
        if self.resource_count < 1:
            raise ValueError("resource_count must be >= 1")
        if len(self.login_profile) != 24 or len(self.submit_profile) != 24:
            raise ValueError("diurnal profiles need 24 hourly values")
        if self.workflow_template not in TEMPLATES:
            raise ValueError(f"unknown workflow template {self.workflow_template!r}")

    @property
    def end_time(self) -> int:
        return self.start_time + int(round(self.days * DAY))


def _hour_grid(config: WorkloadConfig) -> tuple[np.ndarray, np.ndarray]:
    """Start times and hour-of-day of every whole hour in the horizon."""
    starts = np.arange(config.start_time, config.end_time, HOUR, dtype=np.int64)
    return starts, (starts // HOUR) % 24


def gen_interactive(config: WorkloadConfig, rng: np.random.Generator) -> list[Session]:
    """Per-resource login sessions from a piecewise-constant hourly login rate.

    Logins follow an inhomogeneous Poisson process per resource; a login that
    falls inside an ongoing session on the same machine is dropped. Session
    lengths are log-normal. Output is sorted by login time.
    """
    starts, hours = _hour_grid(config)
    rate = np.asarray(config.login_profile, dtype=float)[hours]
    if not rate.any():
        return []
    mu = math.log(config.session_median_minutes * 60)
    end = config.end_time
    sessions: list[Session] = []
    for rid in range(config.resource_count):
        counts = rng.poisson(rate)
        total = int(counts.sum())
        if total == 0:
            continue
        base = np.repeat(starts, counts)
        t = np.sort(base + rng.integers(0, HOUR, size=total))
        lengths = np.maximum(1, np.rint(rng.lognormal(mu, config.session_sigma, size=total)))
        busy_until = -1
        for login, length in zip(t.tolist(), lengths.astype(np.int64).tolist()):
            if login < busy_until:
                continue
            logout = min(login + length, end)
            if logout <= login:
                continue
            sessions.append(Session(rid, login, logout))
            busy_until = logout
    sessions.sort(key=lambda s: (s.login, s.resource_id))
    return sessions


def gen_tasks(config: WorkloadConfig, rng: np.random.Generator) -> list[TraceRow]:
    """``task_count`` HTC tasks with diurnally modulated arrivals and log-normal lengths.

    Conditioned on the count, arrival times of a Poisson process are i.i.d.
    with density proportional to its rate, which is how they are drawn here.
    """
    n = config.task_count
    starts, hours = _hour_grid(config)
    weight = np.asarray(config.submit_profile, dtype=float)[hours]
    if n <= 0 or weight.sum() <= 0 or len(starts) == 0:
        return []
    idx = rng.choice(len(starts), size=n, p=weight / weight.sum())
    times = np.sort(starts[idx] + rng.integers(0, HOUR, size=n))
    mu = math.log(config.duration_median_minutes * 60)
    lengths = np.maximum(1, np.rint(rng.lognormal(mu, config.duration_sigma, size=n))).astype(np.int64)
    return [TraceRow("task", int(t), int(d)) for t, d in zip(times.tolist(), lengths.tolist())]


def montage_like(width: int, project: int = 32 * 60, background: int = 32 * 60,
                 merge: int = 32 * 60, add: int = 32 * 60, shrink: int = 32 * 60) -> WorkflowSpec:
    """Layered mosaic-style DAG: fan out to ``width`` projections, 1:1 background
    fits, then a merge, add and shrink chain. Durations are seconds."""
    if width < 2:
        raise WidthTooSmallError("montage_like needs width >= 2")
    tasks = []
    for i in range(width):
        tasks.append(TaskSpec(f"project{i}", project, project))
        tasks.append(TaskSpec(f"background{i}", background, background, frozenset({f"project{i}"})))
    tasks.append(TaskSpec("merge", merge, merge, frozenset(f"background{i}" for i in range(width))))
    tasks.append(TaskSpec("add", add, add, frozenset({"merge"})))
    tasks.append(TaskSpec("shrink", shrink, shrink, frozenset({"add"})))
    return augment_and_validate(tasks, f"montage{width}")


def _parse_params(text: str) -> dict:
    out = {}
    for item in text.split(";"):
        if item.strip():
            k, _, v = item.partition("=")
            out[k.strip()] = v.strip()
    return out


def _format_params(params: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in sorted(params.items()))


def resolve_template(name: str, params: dict | str = "") -> WorkflowSpec:
    if isinstance(params, str):
        params = _parse_params(params)
    if name == "eight_task":
        return eight_task_workflow(int(params.get("minutes", 32)))
    if name == "montage_like":
        durations = {k: int(v) for k, v in params.items() if k != "width"}
        return montage_like(int(params.get("width", 4)), **durations)
    if name == "file":
        return load_workflow(params["path"])
    raise ValueError(f"unknown workflow template {name!r}")


def inject_workflows(task_trace: Sequence[TraceRow], w: float, template: WorkflowSpec,
                     rng: np.random.Generator, template_name: str = "eight_task",
                     template_params: dict | None = None) -> list[TraceRow]:
    """Replace floor(w * rows) uniformly chosen task rows by workflow arrivals."""
    if not 0 <= w <= 1:
        raise ValueError("w must lie in [0, 1]")
    rows = list(task_trace)
    k = math.floor(Fraction(repr(float(w))) * len(rows))
    if k == 0:
        return rows
    chosen = rng.choice(len(rows), size=k, replace=False)
    params = _format_params(template_params or {})
    for i in sorted(chosen.tolist()):
        rows[i] = TraceRow("workflow", rows[i].submit_time, 0, template, template_name, params)
    return rows


def generate(config: WorkloadConfig, seed: int | None = None):
    """Interactive trace and mixed workload from one seed."""
    ss = np.random.SeedSequence(config.seed if seed is None else seed)
    r_int, r_task, r_inj = (np.random.default_rng(s) for s in ss.spawn(3))
    interactive = gen_interactive(config, r_int)
    tasks = gen_tasks(config, r_task)
    template = resolve_template(config.workflow_template, config.template_params)
    workload = inject_workflows(tasks, config.workflow_fraction, template, r_inj,
                                config.workflow_template, config.template_params)
    return interactive, workload


# --- file formats -----------------------------------------------------------------

def write_interactive(sessions: Sequence[Session], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["resource_id", "login_time", "logout_time"])
        for s in sessions:
            w.writerow([s.resource_id, s.login, s.logout])


def read_interactive(path: str | Path) -> list[Session]:
    sessions = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "resource_id":
                continue
            try:
                rid, login, logout = (int(float(x)) for x in row[:3])
            except ValueError:
                raise MalformedTraceError(f"{path}:{lineno}: bad interactive row {row!r}") from None
            sessions.append(Session(rid, login, logout))
    return sessions


def write_workload(rows: Sequence[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "submit_time", "duration_or_template", "template_params"])
        for r in rows:
            if r.kind == "task":
                w.writerow(["task", r.submit_time, r.duration, ""])
            else:
                w.writerow(["workflow", r.submit_time, r.template, r.params])


def read_workload(path: str | Path) -> list[TraceRow]:
    rows: list[TraceRow] = []
    cache: dict = {}
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or rec[0].strip().startswith("#"):
                continue
            if lineno == 1 and rec[0].strip() == "kind":
                continue
            rec = rec + [""] * (4 - len(rec))
            kind, t, what, params = (x.strip() for x in rec[:4])
            try:
                t = int(float(t))
                if kind == "task":
                    rows.append(TraceRow("task", t, int(float(what))))
                elif kind == "workflow":
                    key = (what, params)
                    if key not in cache:
                        cache[key] = resolve_template(what, params)
                    rows.append(TraceRow("workflow", t, 0, cache[key], what, params))
                else:
                    raise ValueError(f"unknown kind {kind!r}")
            except (ValueError, KeyError) as exc:
                raise MalformedTraceError(f"{path}:{lineno}: {exc}") from None
    return rows
