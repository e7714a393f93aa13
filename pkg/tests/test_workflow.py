import random

import pytest
from hypothesis import given, settings, strategies as st

from replisim import workflow as wfm
from replisim.workflow import (
    END, START, TaskSpec, augment_and_validate, contingency_balanced, contingency_current,
    critical_path, deadline, excess_proportion, local_critical_path, eight_task_workflow,
    ready_tasks,
)

from helpers import brute_longest, random_dag


def T(tid, minutes, preds=(), est=None):
    sec = minutes * 60
    return TaskSpec(tid, sec if est is None else est * 60, sec, frozenset(preds))


def test_augment_disconnected_chains():
    wf = augment_and_validate([T("A", 1), T("B", 1, "A"), T("C", 1), T("D", 1, "C")])
    assert wf.tasks[START].successors == {"A", "C"}
    assert wf.tasks[END].predecessors == {"B", "D"}
    assert wf.tasks[START].actual_duration == wf.tasks[END].actual_duration == 0
    assert wf.tasks["B"].successors == {END}


def test_single_rooted_chain_still_wrapped():
    wf = augment_and_validate([TaskSpec("S1", 0, 0), T("A", 5, ["S1"]), TaskSpec("T1", 0, 0, frozenset({"A"}))])
    assert wf.tasks[START].successors == {"S1"}
    assert wf.tasks[END].predecessors == {"T1"}
    assert len(wf.tasks) == 5


def test_cycle_detected():
    with pytest.raises(wfm.CycleDetectedError):
        augment_and_validate([T("A", 1, ["B"]), T("B", 1, ["A"])])


def test_empty_workflow():
    with pytest.raises(wfm.EmptyWorkflowError):
        augment_and_validate([])


def test_augment_idempotent():
    wf = eight_task_workflow()
    again = augment_and_validate(wf.tasks)
    assert set(again.tasks) == set(wf.tasks)
    assert all(again.tasks[t].successors == wf.tasks[t].successors for t in wf.tasks)


def test_critical_path_two_branches():
    wf = augment_and_validate([T("A", 10), T("C", 7, ["A"]), T("B", 5)])
    assert critical_path(wf) == 17 * 60
    assert local_critical_path(wf, "C", wfm.ACTUAL) == 7 * 60
    assert local_critical_path(wf, END) == 0


def test_critical_path_zero():
    wf = augment_and_validate([T("A", 0), T("B", 0, ["A"])])
    assert critical_path(wf) == 0


def test_unknown_task():
    with pytest.raises(wfm.UnknownTaskError):
        local_critical_path(eight_task_workflow(), "nope")


def test_critical_path_matches_enumeration(rng):
    for _ in range(200):
        wf = random_dag(rng, rng.randint(1, 12))
        for source in (wfm.ACTUAL, wfm.ESTIMATE):
            assert critical_path(wf, source) == brute_longest(wf, START, source)
        t = rng.choice(wf.real_tasks)
        assert local_critical_path(wf, t, wfm.ESTIMATE) == brute_longest(wf, t, wfm.ESTIMATE)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_local_path_of_start_is_critical_path(n, seed):
    wf = random_dag(random.Random(seed), n)
    for source in (wfm.ACTUAL, wfm.ESTIMATE):
        assert local_critical_path(wf, START, source) == critical_path(wf, source)


@pytest.mark.parametrize("c_minus_s,expected", [(100, 0.0), (200, 1.0)])
def test_excess_proportion(c_minus_s, expected):
    assert excess_proportion(50 + c_minus_s, 50, 100) == expected


def test_excess_proportion_worst_case_from_trace():
    assert excess_proportion(18.1113 * 100, 0, 100) == pytest.approx(17.1113, rel=1e-12)


def test_excess_proportion_zero_path():
    with pytest.raises(wfm.ZeroCriticalPathError):
        excess_proportion(10, 0, 0)


def test_deadline_examples():
    chain = augment_and_validate([T("A", 50), T("B", 50, ["A"])], contingency=0.0)
    assert critical_path(chain, wfm.ESTIMATE) == 6000
    assert deadline(chain.instantiate("w", 50, 0.0), 100) == 150
    assert deadline(chain.instantiate("w", 0, 2.0), 100) == 300
    two = augment_and_validate([T("A", 32), T("B", 32, ["A"])])
    assert deadline(two.instantiate("w", 1000, 0.5)) == 1000 + 1.5 * 3840 == 6760


def test_contingency_balanced_examples():
    assert contingency_balanced(200, 50, 100) == 0.5
    assert contingency_balanced(200, 150, 100) == -0.5
    with pytest.raises(wfm.ZeroLocalPathError):
        contingency_balanced(200, 0, 0)


def test_contingency_current_examples():
    assert contingency_current(200, 50, 40, 80) == 0.75
    assert contingency_current(100, 0, 100, 0) == 0
    assert contingency_current(100, 90, 10, 20) == -2.0
    with pytest.raises(wfm.ZeroEstimateError):
        contingency_current(100, 0, 0, 0)


def test_start_task_gets_full_contingency():
    wf = eight_task_workflow().instantiate("w", 1000, 0.3)
    d = deadline(wf)
    cr = critical_path(wf, wfm.ESTIMATE)
    assert contingency_balanced(d, wf.submit_time, cr) == pytest.approx(0.3, rel=1e-12)


def test_balanced_ge_phi_with_equality_on_critical_path(rng):
    for _ in range(200):
        phi = rng.choice([0.1, 0.5, 1.0, 2.0])
        base = random_dag(rng, rng.randint(1, 12))
        specs = [TaskSpec(t.task_id, t.actual_duration, t.actual_duration, t.predecessors)
                 for t in base.tasks.values()]
        wf = augment_and_validate(specs).instantiate("w", 500, phi)
        cr = critical_path(wf, wfm.ESTIMATE)
        if cr == 0:
            continue
        d = deadline(wf)
        for t in wf.tasks[START].successors:
            lp = local_critical_path(wf, t)
            if lp == 0:
                continue
            val = contingency_balanced(d, wf.submit_time, lp)
            assert val >= phi - 1e-12
            on_critical = brute_longest(wf, t, wfm.ESTIMATE) == cr
            assert (abs(val - phi) <= 1e-12 * max(1, phi)) == on_critical


def test_ready_tasks_eight_task_workflow():
    wf = eight_task_workflow()
    assert ready_tasks(wf, {START}) == {"A", "B"}
    assert ready_tasks(wf, set(wf.tasks)) == set()
    done = {START, "A", "B", "C"}
    assert "F" not in ready_tasks(wf, done)
    assert ready_tasks(wf, done | {"D"}) >= {"F", "E", "G"}


def test_ready_tasks_never_premature(rng):
    for _ in range(100):
        wf = random_dag(rng, rng.randint(1, 12))
        done = {START}
        while True:
            ready = ready_tasks(wf, done)
            for t in ready:
                assert wf.tasks[t].predecessors <= done
            if not ready:
                break
            done.add(rng.choice(sorted(ready)))
        assert done == set(wf.tasks) - {END}


def test_eight_task_workflow_shape():
    wf = eight_task_workflow()
    assert wf.real_tasks and len(wf.real_tasks) == 8
    assert wf.tasks["F"].predecessors == {"C", "D"}
    assert critical_path(wf) == 4 * 32 * 60


def test_workflow_file_roundtrip(tmp_path):
    text = "# comment\nA,10,12,\nB,5,5,A:30\nC,2.5,1/3,A;B\n"
    wf = wfm.parse_workflow(text)
    assert wf.tasks["C"].estimated_duration == 150
    assert wf.tasks["C"].actual_duration == 20
    assert wf.tasks["B"].edge_latency == {"A": 30}
    p = tmp_path / "w.csv"
    p.write_text(wfm.format_workflow(wf))
    again = wfm.load_workflow(p)
    for t in wf.tasks:
        assert again.tasks[t] == wf.tasks[t]
        assert again.tasks[t].edge_latency == wf.tasks[t].edge_latency


def test_workflow_file_rejects_fractional_seconds():
    with pytest.raises(wfm.WorkflowError):
        wfm.parse_workflow("A,0.001,1,\n")


def test_outcome_success_uses_exact_bound():
    o = wfm.WorkflowOutcome("w", 0, 100, 110.0, completion_time=110)
    assert o.succeeded_within(0.1)
    assert not o.succeeded_within(0.09)
    assert wfm.WorkflowOutcome("w", 0, 100, 110.0).succeeded_within(5) is False
