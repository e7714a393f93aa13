import numpy as np
import pytest

from replisim.cluster import MalformedTraceError, TraceRow
from replisim.workflow import END, START, eight_task_workflow
from replisim.workload import (
    WidthTooSmallError, WorkloadConfig, gen_interactive, gen_tasks, generate, inject_workflows,
    montage_like, read_interactive, read_workload, resolve_template, write_interactive,
    write_workload,
)

DAY = 86400


def window_share(sessions, lo_hour, hi_hour):
    """Share of session time falling in [lo_hour, hi_hour) of each day, by interval overlap."""
    inside = total = 0
    for s in sessions:
        total += s.logout - s.login
        day = s.login // DAY
        while day * DAY < s.logout:
            a, b = day * DAY + lo_hour * 3600, day * DAY + hi_hour * 3600
            inside += max(0, min(b, s.logout) - max(a, s.login))
            day += 1
    return inside / total


def test_zero_login_intensity_gives_empty_trace():
    cfg = WorkloadConfig(resource_count=10, days=3, login_profile=(0.0,) * 24)
    assert gen_interactive(cfg, np.random.default_rng(0)) == []


def test_daytime_logins_keep_session_time_in_window():
    profile = tuple(1.0 if 10 <= h < 18 else 0.0 for h in range(24))
    cfg = WorkloadConfig(resource_count=400, days=14, login_profile=profile,
                         session_median_minutes=30, session_sigma=0.5)
    sessions = gen_interactive(cfg, np.random.default_rng(1))
    assert len(sessions) > 20_000
    assert window_share(sessions, 10, 18) >= 0.8


def test_sessions_sorted_and_never_overlap():
    cfg = WorkloadConfig(resource_count=25, days=5)
    sessions = gen_interactive(cfg, np.random.default_rng(2))
    assert [s.login for s in sessions] == sorted(s.login for s in sessions)
    last = {}
    for s in sessions:
        assert s.login >= last.get(s.resource_id, -1)
        assert s.login < s.logout <= cfg.end_time
        last[s.resource_id] = s.logout


def test_task_count_order_and_median_length():
    cfg = WorkloadConfig(days=14, task_count=1000)
    rows = gen_tasks(cfg, np.random.default_rng(3))
    assert len(rows) == 1000
    assert [r.submit_time for r in rows] == sorted(r.submit_time for r in rows)
    big = gen_tasks(WorkloadConfig(task_count=40_000), np.random.default_rng(4))
    med = np.median([r.duration for r in big])
    assert abs(med - 1800) <= 0.05 * 1800


def test_zero_tasks_or_zero_rate_gives_empty_trace():
    assert gen_tasks(WorkloadConfig(task_count=0), np.random.default_rng(0)) == []
    cfg = WorkloadConfig(task_count=50, submit_profile=(0.0,) * 24)
    assert gen_tasks(cfg, np.random.default_rng(0)) == []


def test_arrivals_follow_submit_profile():
    profile = tuple(1.0 if h == 12 else 0.0 for h in range(24))
    rows = gen_tasks(WorkloadConfig(task_count=500, submit_profile=profile),
                     np.random.default_rng(5))
    assert {(r.submit_time // 3600) % 24 for r in rows} == {12}


@pytest.mark.parametrize("w,expected", [(0.0, 0), (1.0, 10_000), (0.1, 1000), (0.3, 3000)])
def test_injection_counts(w, expected):
    rows = [TraceRow("task", i, 60) for i in range(10_000)]
    out = inject_workflows(rows, w, eight_task_workflow(), np.random.default_rng(0))
    assert sum(r.kind == "workflow" for r in out) == expected
    assert [r.submit_time for r in out] == list(range(10_000))


def test_injection_rejects_bad_fraction():
    with pytest.raises(ValueError):
        inject_workflows([], 1.5, eight_task_workflow(), np.random.default_rng(0))


def test_montage_like_shapes():
    two = montage_like(2)
    assert len(two.tasks) == 9
    sixteen = montage_like(16)
    assert len(sixteen.tasks) == 37
    assert len(sixteen.tasks["merge"].predecessors) == 16
    assert sixteen.tasks[START].successors == {f"project{i}" for i in range(16)}
    assert sixteen.tasks[END].predecessors == {"shrink"}
    with pytest.raises(WidthTooSmallError):
        montage_like(1)


def test_resolve_template(tmp_path):
    assert len(resolve_template("eight_task", "minutes=10").tasks) == 10
    assert len(resolve_template("montage_like", {"width": "3"}).tasks) == 11
    p = tmp_path / "wf.csv"
    p.write_text("A,5,5,\nB,5,5,A\n")
    assert resolve_template("file", f"path={p}").real_tasks == ["A", "B"]
    with pytest.raises(ValueError):
        resolve_template("pegasus")


def test_generation_is_reproducible(tmp_path):
    cfg = WorkloadConfig(resource_count=30, days=3, task_count=900)
    for tag in ("a", "b"):
        inter, wl = generate(cfg, 42)
        write_interactive(inter, tmp_path / f"i{tag}.csv")
        write_workload(wl, tmp_path / f"w{tag}.csv")
    assert (tmp_path / "ia.csv").read_bytes() == (tmp_path / "ib.csv").read_bytes()
    assert (tmp_path / "wa.csv").read_bytes() == (tmp_path / "wb.csv").read_bytes()
    inter2, _ = generate(cfg, 43)
    write_interactive(inter2, tmp_path / "ic.csv")
    assert (tmp_path / "ic.csv").read_bytes() != (tmp_path / "ia.csv").read_bytes()


def test_trace_files_roundtrip(tmp_path):
    cfg = WorkloadConfig(resource_count=10, days=2, task_count=300, workflow_template="montage_like",
                         template_params={"width": "3"})
    inter, wl = generate(cfg, 7)
    write_interactive(inter, tmp_path / "i.csv")
    write_workload(wl, tmp_path / "w.csv")
    assert read_interactive(tmp_path / "i.csv") == inter
    back = read_workload(tmp_path / "w.csv")
    assert [(r.kind, r.submit_time, r.duration, r.template, r.params) for r in back] == \
           [(r.kind, r.submit_time, r.duration, r.template, r.params) for r in wl]
    assert all(len(r.workflow.tasks) == 11 for r in back if r.kind == "workflow")


def test_malformed_trace_reports_path_and_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("resource_id,login_time,logout_time\n0,10,20\n1,x,30\n")
    with pytest.raises(MalformedTraceError, match=r"bad.csv:3"):
        read_interactive(p)
    q = tmp_path / "badw.csv"
    q.write_text("kind,submit_time,duration_or_template,template_params\nbatch,0,10,\n")
    with pytest.raises(MalformedTraceError, match=r"badw.csv:2"):
        read_workload(q)


def test_config_validation():
    with pytest.raises(ValueError):
        WorkloadConfig(workflow_fraction=1.2)
    with pytest.raises(ValueError):
        WorkloadConfig(login_profile=(1.0,) * 23)
    with pytest.raises(ValueError):
        WorkloadConfig(workflow_template="dax")
