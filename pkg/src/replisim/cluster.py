"""Discrete-event simulation of a shared HTC cluster running replicated workflow tasks.

Resources hold one HTC invocation at a time and are reclaimed by interactive
users (login) and by a nightly reboot; reclaimed work is relaunched from
scratch. The first replica of a task to finish wins and its siblings are
cancelled. Energy is kept in exact watt-hours (Fractions).
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .policy import (
    DEFAULT_BINS, RewardSignal, State, compute_sigma, decide_replicas, discretize, reward,
)
from .workflow import (
    END, ESTIMATE, START, WorkflowOutcome, WorkflowSpec, ZeroCriticalPathError,
    contingency_balanced, contingency_current, critical_path, deadline,
)

log = logging.getLogger(__name__)

DAY = 86400
HOUR = 3600

# event kinds, in tie-break priority order at equal timestamps
COMPLETE = 0
LOGOUT = 1
REBOOT_END = 2
REBOOT = 3
LOGIN = 4
WORKFLOW_ARRIVAL = 5
TASK_READY = 6

EVENT_NAMES = {
    COMPLETE: "invocation_complete", LOGOUT: "interactive_logout",
    REBOOT_END: "reboot_end", REBOOT: "nightly_reboot", LOGIN: "interactive_login",
    WORKFLOW_ARRIVAL: "workflow_arrival", TASK_READY: "task_ready",
}

COMPLETED = "completed"
EVICTED = "evicted"
CANCELLED = "cancelled"
TRUNCATED = "truncated"  # still running at the horizon


class MalformedTraceError(ValueError):
    pass


def as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class Resource:
    resource_id: int
    power_active: Fraction = Fraction(100)
    power_idle: Fraction = Fraction(40)
    reboot_hour: int = 3

    def __post_init__(self):
        object.__setattr__(self, "power_active", as_fraction(self.power_active))
        object.__setattr__(self, "power_idle", as_fraction(self.power_idle))
        if not self.power_active >= self.power_idle >= 0:
            raise ValueError(f"resource {self.resource_id}: need active >= idle >= 0")


@dataclass(frozen=True)
class Session:
    resource_id: int
    login: int
    logout: int


@dataclass(frozen=True)
class TraceRow:
    kind: str  # "task" or "workflow"
    submit_time: int
    duration: int = 0
    workflow: WorkflowSpec | None = None
    template: str = ""
    params: str = ""


@dataclass
class ClusterConfig:
    resource_count: int = 200
    power_profiles: Sequence[tuple] = ((100, 40),)
    reboot_enabled: bool = True
    reboot_hour: int = 3
    reboot_minutes: int = 10
    xi: float | None = None
    phi: float = 0.1
    balancing: str = "balanced"  # or "current"
    rl_P: float = 1.0
    rl_bins: int = DEFAULT_BINS
    scheduling_latency: int = 0
    start_time: int = 0
    horizon: int | None = None
    drain_hours: int = 48
    record_events: bool = False

    def resources(self) -> list[Resource]:
        profiles = list(self.power_profiles)
        return [
            Resource(i, *profiles[i % len(profiles)][:2], reboot_hour=self.reboot_hour)
            for i in range(self.resource_count)
        ]


@dataclass(eq=False)
class Invocation:
    workflow_id: str
    task_id: str
    replica: int
    attempt: int
    length: int
    submit: int
    resource: int | None = None
    start: int | None = None
    end: int | None = None
    outcome: str | None = None
    good: bool = False
    energy: Fraction = Fraction(0)
    task: "_TaskRun | None" = field(default=None, repr=False)
    withdrawn: bool = False

    @property
    def tau(self) -> int:
        return self.end - self.start


@dataclass
class Decision:
    workflow_id: str
    task_id: str
    time: int
    phi_prime: float
    state: State
    action: int
    reward: float | None = None
    sigma: float | None = None
    succeeded: bool | None = None


@dataclass
class EnergyLedger:
    """Good/bad watt-hours per task key ``(workflow_id, task_id)`` plus idle energy."""

    good: dict = field(default_factory=dict)
    bad: dict = field(default_factory=dict)
    workflow_keys: set = field(default_factory=set)
    idle: Fraction = Fraction(0)

    def add(self, key, energy: Fraction, is_good: bool) -> None:
        book = self.good if is_good else self.bad
        book[key] = book.get(key, Fraction(0)) + energy
        other = self.bad if is_good else self.good
        other.setdefault(key, Fraction(0))

    def _sum(self, book, scope):
        if scope == "all":
            return sum(book.values(), Fraction(0))
        want = scope == "workflow"
        return sum((v for k, v in book.items() if (k in self.workflow_keys) == want), Fraction(0))

    def good_total(self, scope: str = "workflow") -> Fraction:
        return self._sum(self.good, scope)

    def bad_total(self, scope: str = "workflow") -> Fraction:
        return self._sum(self.bad, scope)

    def total(self, scope: str = "workflow") -> Fraction:
        return self.good_total(scope) + self.bad_total(scope)


@dataclass
class SimulationReport:
    policy: str
    start_time: int
    horizon: int
    workflows: list[WorkflowOutcome]
    invocations: list[Invocation]
    decisions: list[Decision]
    ledger: EnergyLedger
    background_tasks: int = 0
    background_completed: int = 0
    end_time: int = 0
    events: list | None = None

    @property
    def incomplete(self) -> int:
        return sum(1 for w in self.workflows if not w.completed)


class _TaskRun:
    __slots__ = ("wf", "task_id", "key", "length", "estimate", "first_submit", "replicas",
                 "phi_prime", "decision", "done", "running", "queued", "bad")

    def __init__(self, wf, task_id, key, length, estimate, first_submit, replicas,
                 phi_prime=None, decision=None):
        self.wf = wf
        self.task_id = task_id
        self.key = key
        self.length = length
        self.estimate = estimate
        self.first_submit = first_submit
        self.replicas = replicas
        self.phi_prime = phi_prime
        self.decision = decision
        self.done = False
        self.running: set[Invocation] = set()
        self.queued: set[Invocation] = set()
        self.bad = Fraction(0)


class _WorkflowRun:
    __slots__ = ("spec", "index", "cr", "deadline", "done", "local")

    def __init__(self, spec, index, cr, d):
        self.spec = spec
        self.index = index
        self.cr = cr
        self.deadline = d
        self.done = {START}
        self.local = spec.local_paths(ESTIMATE)


def validate_interactive(sessions: Sequence[Session], resource_count: int) -> None:
    last_login = None
    last_out: dict[int, int] = {}
    for s in sessions:
        if not 0 <= s.resource_id < resource_count:
            raise MalformedTraceError(f"session on unknown resource {s.resource_id}")
        if s.logout < s.login:
            raise MalformedTraceError(f"session on {s.resource_id} ends before it starts")
        if last_login is not None and s.login < last_login:
            raise MalformedTraceError("interactive trace is not sorted by login time")
        if s.login < last_out.get(s.resource_id, s.login):
            raise MalformedTraceError(f"overlapping sessions on resource {s.resource_id}")
        last_login = s.login
        last_out[s.resource_id] = s.logout


def validate_workload(rows: Sequence[TraceRow]) -> None:
    prev = None
    for r in rows:
        if r.kind not in ("task", "workflow"):
            raise MalformedTraceError(f"unknown row kind {r.kind!r}")
        if r.kind == "workflow" and r.workflow is None:
            raise MalformedTraceError("workflow row without a workflow")
        if r.kind == "task" and r.duration < 0:
            raise MalformedTraceError("negative task duration")
        if prev is not None and r.submit_time < prev:
            raise MalformedTraceError("workload is not sorted by submit time")
        prev = r.submit_time


class Simulation:
    """One run of the engine. Use :func:`run` for the usual entry point."""

    def __init__(self, config: ClusterConfig, interactive: Sequence[Session],
                 workload: Sequence[TraceRow], policy, rng: np.random.Generator):
        validate_interactive(interactive, config.resource_count)
        validate_workload(workload)
        if config.balancing not in ("balanced", "current"):
            raise ValueError(f"unknown balancing mode {config.balancing!r}")
        self.config = config
        self.policy = policy
        self.rng = rng
        self.resources = config.resources()
        n_res = len(self.resources)
        self.xi = float(config.xi) if config.xi is not None else float(
            sum(r.power_active for r in self.resources) / max(n_res, 1))
        self.P = getattr(policy, "P", config.rl_P)
        self.n_bins = getattr(policy, "n", config.rl_bins)

        self.start = config.start_time
        if config.horizon is not None:
            self.horizon = config.horizon
        else:
            last = max((r.submit_time for r in workload), default=self.start)
            self.horizon = max(last, self.start) + config.drain_hours * HOUR

        self.heap: list = []
        self.seq = 0
        self.events = [] if config.record_events else None

        self.running: list[Invocation | None] = [None] * n_res
        self.user_active = [False] * n_res
        self.rebooting = [False] * n_res
        self.busy = [0] * n_res
        self.free: list[int] = []
        self.free_pos: dict[int, int] = {}
        for rid in range(n_res):
            self._mark_free(rid)

        self.queue: deque[Invocation] = deque()
        self.queued_live = 0
        self.active_tasks = 0
        self.pending_arrivals = 0

        self.ledger = EnergyLedger()
        self.invocations: list[Invocation] = []
        self.decisions: list[Decision] = []
        self.outcomes: list[WorkflowOutcome] = []
        self.bg_tasks = 0
        self.bg_done = 0

        for s in interactive:
            if s.login < self.horizon:
                self._push(s.login, LOGIN, s)
                self._push(s.logout, LOGOUT, s)
        if config.reboot_enabled:
            self._schedule_reboots()
        for i, row in enumerate(workload):
            kind = WORKFLOW_ARRIVAL if row.kind == "workflow" else TASK_READY
            self._push(row.submit_time, kind, (i, row))
            self.pending_arrivals += 1

    # -- plumbing --------------------------------------------------------------

    def _push(self, t, kind, payload):
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, payload))

    def _schedule_reboots(self):
        groups: dict[int, list[int]] = {}
        for r in self.resources:
            groups.setdefault(r.reboot_hour, []).append(r.resource_id)
        day0 = self.start - self.start % DAY
        for hour, rids in sorted(groups.items()):
            t = day0 + hour * HOUR
            while t < self.horizon:
                if t >= self.start:
                    self._push(t, REBOOT, tuple(rids))
                t += DAY

    def _mark_free(self, rid):
        if rid in self.free_pos:
            return
        self.free_pos[rid] = len(self.free)
        self.free.append(rid)

    def _mark_unfree(self, rid):
        i = self.free_pos.pop(rid, None)
        if i is None:
            return
        last = self.free.pop()
        if last != rid:
            self.free[i] = last
            self.free_pos[last] = i

    def _available(self, rid):
        return not self.user_active[rid] and not self.rebooting[rid] and self.running[rid] is None

    # -- invocation lifecycle ------------------------------------------------------

    def _enqueue(self, task: _TaskRun, replica: int, attempt: int, t: int):
        wid = task.key[0]
        inv = Invocation(wid, task.task_id, replica, attempt, task.length, t, task=task)
        task.queued.add(inv)
        self.queue.append(inv)
        self.queued_live += 1

    def _close(self, inv: Invocation, t: int, outcome: str):
        rid = inv.resource
        inv.end = t
        inv.outcome = outcome
        inv.good = outcome == COMPLETED
        tau = t - inv.start
        inv.energy = Fraction(tau) * self.resources[rid].power_active / HOUR
        self.busy[rid] += tau
        self.running[rid] = None
        task = inv.task
        task.running.discard(inv)
        if not inv.good:
            task.bad += inv.energy
        self.ledger.add(task.key, inv.energy, inv.good)
        self.invocations.append(inv)

    def _evict(self, rid: int, t: int):
        inv = self.running[rid]
        if inv is None:
            return
        self._close(inv, t, EVICTED)
        self._enqueue(inv.task, inv.replica, inv.attempt + 1, t)

    def dispatch_queue(self, t: int) -> int:
        """FCFS placement of queued invocations on uniformly random free resources.

        Resources run a single invocation, so a free resource never already
        hosts a replica of the task being placed.
        """
        placed = 0
        q = self.queue
        while q and self.free:
            inv = q.popleft()
            if inv.withdrawn:
                continue
            self.queued_live -= 1
            k = int(self.rng.integers(len(self.free))) if len(self.free) > 1 else 0
            rid = self.free[k]
            self._mark_unfree(rid)
            inv.resource = rid
            inv.start = t
            self.running[rid] = inv
            inv.task.queued.discard(inv)
            inv.task.running.add(inv)
            self._push(t + inv.length, COMPLETE, inv)
            placed += 1
        return placed

    # -- workflow logic ---------------------------------------------------------------

    def _balanced_slack(self, wf: _WorkflowRun, tid: str, t: int) -> float:
        lp = wf.local[tid]
        return contingency_balanced(wf.deadline, t, lp) if lp > 0 else float("inf")

    def _phi_prime(self, wf: _WorkflowRun, tid: str, t: int) -> float:
        """Slack proportion fed to the policy: phi' when balanced, phi'' for ``current``."""
        if self.config.balancing == "balanced":
            return self._balanced_slack(wf, tid, t)
        spec = wf.spec.tasks[tid]
        if spec.estimated_duration <= 0:
            return float("inf")
        tail = max((wf.local[c] for c in spec.successors), default=0)
        return contingency_current(wf.deadline, t, spec.estimated_duration, tail)

    def _submit_workflow_task(self, wf: _WorkflowRun, tid: str, t: int):
        if self.config.scheduling_latency > 0:
            self._push(t + self.config.scheduling_latency, TASK_READY, (wf, tid))
            self.pending_arrivals += 1
            return
        self._release(wf, tid, t)

    def _release(self, wf: _WorkflowRun, tid: str, t: int):
        spec = wf.spec.tasks[tid]
        phi_p = self._phi_prime(wf, tid, t)
        a = decide_replicas(self.policy, t, phi_p)
        state = discretize(t, phi_p, self.P, self.n_bins)
        dec = Decision(wf.spec.workflow_id, tid, t, phi_p, state, a)
        self.decisions.append(dec)
        key = (wf.spec.workflow_id, tid)
        self.ledger.workflow_keys.add(key)
        # the reward's success window always uses the balanced share of slack
        window = phi_p if self.config.balancing == "balanced" else self._balanced_slack(wf, tid, t)
        task = _TaskRun(wf, tid, key, spec.actual_duration, spec.estimated_duration, t, a,
                        window, dec)
        self.active_tasks += 1
        for r in range(a):
            self._enqueue(task, r, 0, t)

    def on_workflow_start(self, index: int, row: TraceRow, t: int):
        spec = row.workflow.instantiate(f"wf{index}", t, self.config.phi)
        cr = critical_path(spec, ESTIMATE)
        if cr == 0:
            raise ZeroCriticalPathError(f"workflow row {index} has a zero critical path")
        d = deadline(spec, cr)
        wf = _WorkflowRun(spec, len(self.outcomes), cr, d)
        self.outcomes.append(WorkflowOutcome(spec.workflow_id, t, cr, d))
        for tid in sorted(spec.tasks[START].successors):
            self._submit_workflow_task(wf, tid, t)

    def on_first_completion(self, inv: Invocation, t: int):
        task = inv.task
        self._close(inv, t, COMPLETED)
        for other in sorted(task.running, key=lambda x: x.replica):
            self._mark_free_after(other.resource, other, t)
        for q in task.queued:
            q.withdrawn = True
            self.queued_live -= 1
        task.queued.clear()
        task.done = True
        self.active_tasks -= 1
        self._mark_free_if_available(inv.resource)

        if task.wf is None:
            self.bg_done += 1
            return
        # every replica is closed at this point, so the realized waste is known
        dec = task.decision
        if task.estimate > 0:
            ok = t - task.first_submit <= (1 + task.phi_prime) * task.estimate
            sigma = compute_sigma(task.bad, task.replicas, task.estimate / HOUR, self.xi)
        else:
            ok, sigma = True, 0.0
        sig: RewardSignal = reward(ok, sigma)
        dec.reward, dec.sigma, dec.succeeded = sig.value, sig.sigma, sig.succeeded
        self.policy.learn(dec.state, dec.action, sig)

        wf = task.wf
        wf.done.add(task.task_id)
        tasks = wf.spec.tasks
        for child in sorted(tasks[task.task_id].successors):
            if not tasks[child].predecessors <= wf.done:
                continue
            if child == END:
                wf.done.add(END)
                o = self.outcomes[wf.index]
                self.outcomes[wf.index] = WorkflowOutcome(
                    o.workflow_id, o.submit_time, o.critical_path, o.deadline, t)
            else:
                self._submit_workflow_task(wf, child, t)

    def _mark_free_after(self, rid, inv, t):
        self._close(inv, t, CANCELLED)
        self._mark_free_if_available(rid)

    def _mark_free_if_available(self, rid):
        if self._available(rid):
            self._mark_free(rid)

    def on_eviction(self, rid: int, t: int):
        self._evict(rid, t)
        self._mark_unfree(rid)

    # -- main loop -----------------------------------------------------------------------

    def _handle(self, t, kind, payload):
        if kind == COMPLETE:
            if payload.end is None:
                self.on_first_completion(payload, t)
        elif kind == LOGIN:
            rid = payload.resource_id
            self.user_active[rid] = True
            self.on_eviction(rid, t)
        elif kind == LOGOUT:
            rid = payload.resource_id
            self.user_active[rid] = False
            self._mark_free_if_available(rid)
        elif kind == REBOOT:
            for rid in payload:
                self.rebooting[rid] = True
                self.on_eviction(rid, t)
            self._push(t + self.config.reboot_minutes * 60, REBOOT_END, payload)
        elif kind == REBOOT_END:
            for rid in payload:
                self.rebooting[rid] = False
                self._mark_free_if_available(rid)
        elif kind == WORKFLOW_ARRIVAL:
            self.pending_arrivals -= 1
            index, row = payload
            self.on_workflow_start(index, row, t)
        elif kind == TASK_READY:
            self.pending_arrivals -= 1
            a, b = payload
            if isinstance(a, _WorkflowRun):
                self._release(a, b, t)
            else:
                self.bg_tasks += 1
                task = _TaskRun(None, f"bg{a}", ("", f"bg{a}"), b.duration, b.duration, t, 1)
                self.active_tasks += 1
                self._enqueue(task, 0, 0, t)

    def run(self) -> SimulationReport:
        heap = self.heap
        now = self.start
        while heap:
            t = heap[0][0]
            if t > self.horizon:
                break
            now = t
            while heap and heap[0][0] == t:
                _, kind, _, payload = heapq.heappop(heap)
                if self.events is not None:
                    self.events.append((t, EVENT_NAMES[kind], _describe(payload)))
                self._handle(t, kind, payload)
            self.dispatch_queue(t)
            if self.active_tasks == 0 and self.pending_arrivals == 0:
                break

        for rid, inv in enumerate(self.running):
            if inv is not None:
                self._close(inv, self.horizon, TRUNCATED)
        span = self.horizon - self.start
        self.ledger.idle = sum(
            (Fraction(max(span - self.busy[r.resource_id], 0)) * r.power_idle / HOUR
             for r in self.resources),
            Fraction(0),
        )
        return SimulationReport(
            policy=getattr(self.policy, "label", str(self.policy)),
            start_time=self.start,
            horizon=self.horizon,
            workflows=list(self.outcomes),
            invocations=self.invocations,
            decisions=self.decisions,
            ledger=self.ledger,
            background_tasks=self.bg_tasks,
            background_completed=self.bg_done,
            end_time=now,
            events=self.events,
        )


def _describe(payload):
    if isinstance(payload, Invocation):
        return f"{payload.workflow_id}/{payload.task_id}#{payload.replica}.{payload.attempt}"
    if isinstance(payload, Session):
        return f"r{payload.resource_id}"
    if isinstance(payload, tuple) and payload and isinstance(payload[0], _WorkflowRun):
        return f"{payload[0].spec.workflow_id}/{payload[1]}"
    if isinstance(payload, tuple) and len(payload) == 2 and isinstance(payload[1], TraceRow):
        return f"row{payload[0]}"
    return repr(payload)


def run(config: ClusterConfig, interactive: Sequence[Session], workload: Sequence[TraceRow],
        policy, rng: np.random.Generator | int = 0) -> SimulationReport:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return Simulation(config, interactive, workload, policy, rng).run()


def check_conservation(report: SimulationReport) -> list[str]:
    """Return violations of per-task energy conservation and the single-winner rule."""
    problems = []
    per_task: dict = {}
    winners: dict = {}
    for inv in report.invocations:
        key = (inv.workflow_id, inv.task_id)
        per_task[key] = per_task.get(key, Fraction(0)) + inv.energy
        if inv.good:
            winners[key] = winners.get(key, 0) + 1
            if inv.outcome != COMPLETED:
                problems.append(f"{key}: good invocation not completed")
    led = report.ledger
    for key, total in per_task.items():
        if led.good.get(key, 0) + led.bad.get(key, 0) != total:
            problems.append(f"{key}: good+bad != sum of invocation energy")
        if winners.get(key, 0) > 1:
            problems.append(f"{key}: more than one winning invocation")
        if (led.good.get(key, 0) > 0) != (winners.get(key, 0) == 1) and total > 0:
            problems.append(f"{key}: good energy without exactly one winner")
    return problems
