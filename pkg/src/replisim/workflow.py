"""Workflow DAGs: augmentation, critical paths and per-task contingency."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Mapping

START = "__S__"
END = "__T__"
SYNTHETIC = (START, END)

ACTUAL = "actual"
ESTIMATE = "estimate"

TASK_MINUTES = 32


class WorkflowError(ValueError):
    pass


class CycleDetectedError(WorkflowError):
    pass


class EmptyWorkflowError(WorkflowError):
    pass


class UnknownTaskError(WorkflowError, KeyError):
    pass


class ZeroCriticalPathError(WorkflowError):
    pass


class ZeroLocalPathError(WorkflowError):
    pass


class ZeroEstimateError(WorkflowError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    estimated_duration: int
    actual_duration: int
    predecessors: frozenset[str] = frozenset()
    successors: frozenset[str] = frozenset()
    # scheduling latency per incoming edge, seconds; parsed and kept, the
    # engine applies a single constant latency instead
    edge_latency: Mapping[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.estimated_duration < 0 or self.actual_duration < 0:
            raise WorkflowError(f"task {self.task_id}: negative duration")

    def duration(self, source: str) -> int:
        return self.actual_duration if source == ACTUAL else self.estimated_duration


@dataclass(frozen=True)
class WorkflowSpec:
    workflow_id: str
    tasks: Mapping[str, TaskSpec]
    submit_time: int = 0
    contingency: float = 0.0

    @cached_property
    def order(self) -> tuple[str, ...]:
        """Task ids in a topological order (start first)."""
        ts = TopologicalSorter({t: spec.predecessors for t, spec in self.tasks.items()})
        return tuple(ts.static_order())

    @cached_property
    def _local_estimate(self) -> dict[str, int]:
        return _local_paths(self, ESTIMATE)

    @cached_property
    def _local_actual(self) -> dict[str, int]:
        return _local_paths(self, ACTUAL)

    def local_paths(self, source: str = ESTIMATE) -> dict[str, int]:
        return self._local_actual if source == ACTUAL else self._local_estimate

    @property
    def real_tasks(self) -> list[str]:
        return [t for t in self.order if t not in SYNTHETIC]

    def instantiate(self, workflow_id: str, submit_time: int, contingency: float) -> "WorkflowSpec":
        return dataclasses.replace(
            self, workflow_id=workflow_id, submit_time=submit_time, contingency=contingency
        )


@dataclass(frozen=True)
class WorkflowOutcome:
    workflow_id: str
    submit_time: int
    critical_path: int
    deadline: float
    completion_time: int | None = None

    @property
    def completed(self) -> bool:
        return self.completion_time is not None

    @property
    def excess_proportion(self) -> float | None:
        if self.completion_time is None:
            return None
        return excess_proportion(self.completion_time, self.submit_time, self.critical_path)

    def succeeded_within(self, P: float) -> bool:
        """True when the workflow completed with p(W) <= P, compared exactly."""
        if self.completion_time is None:
            return False
        bound = (1 + Fraction(repr(float(P)))) * self.critical_path
        return self.completion_time - self.submit_time <= bound


@dataclass(frozen=True)
class ContingencySnapshot:
    task_id: str
    deadline: float
    local_path: int
    balanced: float | None
    current: float | None


def augment_and_validate(raw_dag: Iterable[TaskSpec] | Mapping[str, TaskSpec],
                         workflow_id: str = "W", submit_time: int = 0,
                         contingency: float = 0.0) -> WorkflowSpec:
    """Wrap a raw DAG with zero-duration start/end tasks and check it is acyclic.

    Predecessor lists are authoritative; successor sets are rebuilt. Any
    synthetic start/end already present is stripped first, so augmenting an
    augmented workflow yields the same shape.
    """
    specs = list(raw_dag.values()) if isinstance(raw_dag, Mapping) else list(raw_dag)
    specs = [s for s in specs if s.task_id not in SYNTHETIC]
    if not specs:
        raise EmptyWorkflowError("workflow has no tasks")

    ids = [s.task_id for s in specs]
    if len(set(ids)) != len(ids):
        raise WorkflowError("duplicate task ids")
    known = set(ids)

    preds: dict[str, set[str]] = {}
    latency: dict[str, dict[str, int]] = {}
    for s in specs:
        p = {x for x in s.predecessors if x not in SYNTHETIC}
        missing = p - known
        if missing:
            raise UnknownTaskError(f"task {s.task_id} depends on unknown {sorted(missing)}")
        preds[s.task_id] = p
        latency[s.task_id] = {k: v for k, v in s.edge_latency.items() if k in p}

    succs: dict[str, set[str]] = {t: set() for t in ids}
    for t, ps in preds.items():
        for p in ps:
            succs[p].add(t)

    roots = [t for t in ids if not preds[t]]
    leaves = [t for t in ids if not succs[t]]
    for t in roots:
        preds[t].add(START)
    for t in leaves:
        succs[t].add(END)

    tasks: dict[str, TaskSpec] = {
        START: TaskSpec(START, 0, 0, frozenset(), frozenset(roots)),
    }
    for s in specs:
        tasks[s.task_id] = TaskSpec(
            s.task_id, s.estimated_duration, s.actual_duration,
            frozenset(preds[s.task_id]), frozenset(succs[s.task_id]),
            latency[s.task_id],
        )
    tasks[END] = TaskSpec(END, 0, 0, frozenset(leaves), frozenset())

    wf = WorkflowSpec(workflow_id, tasks, submit_time, contingency)
    try:
        wf.order
    except CycleError as exc:
        raise CycleDetectedError(f"workflow {workflow_id} has a cycle: {exc.args[1]}") from None
    return wf


def _local_paths(workflow: WorkflowSpec, source: str) -> dict[str, int]:
    out: dict[str, int] = {}
    for t in reversed(workflow.order):
        spec = workflow.tasks[t]
        tail = max((out[c] for c in spec.successors), default=0)
        out[t] = spec.duration(source) + tail
    return out


def critical_path(workflow: WorkflowSpec, duration_source: str = ACTUAL) -> int:
    """Length of the longest start-to-end chain under the chosen durations."""
    return workflow.local_paths(duration_source)[START]


def local_critical_path(workflow: WorkflowSpec, task_id: str,
                        duration_source: str = ESTIMATE) -> int:
    """Longest chain from ``task_id`` (inclusive) to the end task."""
    try:
        return workflow.local_paths(duration_source)[task_id]
    except KeyError:
        raise UnknownTaskError(task_id) from None


def max_child_path(workflow: WorkflowSpec, task_id: str, duration_source: str = ESTIMATE) -> int:
    paths = workflow.local_paths(duration_source)
    try:
        children = workflow.tasks[task_id].successors
    except KeyError:
        raise UnknownTaskError(task_id) from None
    return max((paths[c] for c in children), default=0)


def excess_proportion(c: float, s: float, CR: float) -> float:
    if CR == 0:
        raise ZeroCriticalPathError("critical path is zero")
    return (c - s) / CR - 1


def deadline(workflow: WorkflowSpec, critical: int | None = None) -> float:
    if critical is None:
        critical = critical_path(workflow, ESTIMATE)
    return (workflow.contingency + 1) * critical + workflow.submit_time


def contingency_balanced(d: float, s_t: float, local_path: float) -> float:
    """Slack proportion shared over the task and everything downstream of it."""
    if local_path <= 0:
        raise ZeroLocalPathError("local critical path is zero")
    return (d - s_t) / local_path - 1


def contingency_current(d: float, s_t: float, e_t: float, max_child: float) -> float:
    """Slack proportion when all remaining slack goes to the current task."""
    if e_t <= 0:
        raise ZeroEstimateError("estimated duration is zero")
    return (d - s_t - max_child) / e_t - 1


def classify(phi_prime: float, phi: float) -> str:
    if phi_prime >= phi:
        return "on_schedule"
    if phi_prime >= 0:
        return "behind"
    return "critical"


def snapshot(workflow: WorkflowSpec, task_id: str, d: float, s_t: float) -> ContingencySnapshot:
    spec = workflow.tasks[task_id]
    lp = local_critical_path(workflow, task_id)
    balanced = contingency_balanced(d, s_t, lp) if lp > 0 else None
    current = None
    if spec.estimated_duration > 0:
        current = contingency_current(d, s_t, spec.estimated_duration,
                                      max_child_path(workflow, task_id))
    return ContingencySnapshot(task_id, d, lp, balanced, current)


def ready_tasks(workflow: WorkflowSpec, completed: Iterable[str],
                running: Iterable[str] = ()) -> set[str]:
    """Real tasks whose predecessors have all completed.

    The synthetic start counts as complete from submission; the synthetic end
    is never returned.
    """
    done = set(completed) | {START}
    busy = set(running)
    return {
        t for t, spec in workflow.tasks.items()
        if t not in SYNTHETIC and t not in done and t not in busy
        and spec.predecessors <= done
    }


# --- templates ---------------------------------------------------------------

def eight_task_workflow(minutes: int = TASK_MINUTES) -> WorkflowSpec:
    """Eight-task A..H workflow with F waiting on both C and D."""
    sec = minutes * 60
    deps = {
        "A": (), "B": (), "C": ("A",), "D": ("B",),
        "E": ("C",), "F": ("C", "D"), "G": ("D",), "H": ("E", "F", "G"),
    }
    return augment_and_validate(
        [TaskSpec(t, sec, sec, frozenset(p)) for t, p in deps.items()], "eight_task")


def parse_minutes(text: str) -> int:
    seconds = Fraction(text.strip()) * 60
    if seconds.denominator != 1:
        raise WorkflowError(f"duration {text!r} minutes is not a whole number of seconds")
    return int(seconds)


def parse_workflow(text: str, workflow_id: str = "W") -> WorkflowSpec:
    """Parse ``task_id, est_min, actual_min, pred[:latency];pred...`` lines."""
    specs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise WorkflowError(f"line {lineno}: expected 3 or 4 fields, got {len(parts)}")
        if parts[0].lower() == "task_id":
            continue
        preds, lat = set(), {}
        if len(parts) == 4 and parts[3]:
            for item in parts[3].split(";"):
                item = item.strip()
                if not item:
                    continue
                name, _, secs = item.partition(":")
                preds.add(name)
                if secs:
                    lat[name] = int(secs)
        try:
            est, act = parse_minutes(parts[1]), parse_minutes(parts[2])
        except (ValueError, ZeroDivisionError) as exc:
            raise WorkflowError(f"line {lineno}: {exc}") from None
        specs.append(TaskSpec(parts[0], est, act, frozenset(preds), edge_latency=lat))
    return augment_and_validate(specs, workflow_id)


def load_workflow(path: str | Path) -> WorkflowSpec:
    path = Path(path)
    return parse_workflow(path.read_text(), path.stem)


def format_workflow(workflow: WorkflowSpec) -> str:
    lines = []
    for t in workflow.real_tasks:
        spec = workflow.tasks[t]
        preds = []
        for p in sorted(spec.predecessors - {START}):
            lat = spec.edge_latency.get(p)
            preds.append(f"{p}:{lat}" if lat else p)
        est = Fraction(spec.estimated_duration, 60)
        act = Fraction(spec.actual_duration, 60)
        # Fraction's str ("97/2") parses back exactly
        lines.append(f"{t},{est},{act},{';'.join(preds)}")
    return "\n".join(lines) + "\n"
