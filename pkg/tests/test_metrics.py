import csv
from fractions import Fraction

import pytest

from replisim.cluster import (
    CANCELLED, COMPLETED, EVICTED, TRUNCATED, ClusterConfig, EnergyLedger, Invocation,
    SimulationReport, TraceRow, run,
)
from replisim.metrics import (
    EmptyReportError, EnergySummary, compare_energy, energy_summary, heatmap, length_bin,
    p_cdf, percent_change, pooled_probability, success_counts, write_cdf, write_energy,
    write_heatmap, write_success,
)
from replisim.policy import FixedPolicy
from replisim.workflow import WorkflowOutcome, eight_task_workflow


def outcome(p, cr=100):
    if p is None:
        return WorkflowOutcome("w", 0, cr, 1.1 * cr)
    return WorkflowOutcome("w", 0, cr, 1.1 * cr, completion_time=int(cr * (1 + p)))


def report(workflows=(), invocations=(), ledger=None, policy="single"):
    return SimulationReport(policy, 0, 86400, list(workflows), list(invocations), [],
                            ledger or EnergyLedger())


def inv(length, hour, outcome_, minute=0):
    t = hour * 3600 + minute * 60
    return Invocation("w", "t", 0, 0, length, t, resource=0, start=t, end=t + length,
                      outcome=outcome_)


def test_success_counts_example():
    rep = report([outcome(0.0), outcome(0.1), outcome(0.5), outcome(1.0), outcome(None)])
    s = success_counts(rep, (0.1, 0.5, 1.0, 2.0))
    assert s.counts == (2, 3, 4, 4)
    assert s.total == 5
    assert s.count_at(0.5) == 3


def test_success_counts_monotone_on_simulation():
    rows = [TraceRow("workflow", i * 900, 0, eight_task_workflow(), "eight_task", "")
            for i in range(40)]
    rep = run(ClusterConfig(resource_count=6), [], rows, FixedPolicy(2), 0)
    counts = success_counts(rep).counts
    assert all(b >= a for a, b in zip(counts, counts[1:]))


def test_cdf_examples():
    assert p_cdf(report([outcome(0.5)])) == [(0.5, 1.0)]
    rep = report([outcome(0), outcome(1), outcome(1), outcome(3), outcome(None)])
    assert p_cdf(rep) == [(0.0, 0.25), (1.0, 0.75), (3.0, 1.0)]
    with pytest.raises(EmptyReportError):
        p_cdf(report([outcome(None)]))


@pytest.mark.parametrize("seconds,lower", [(1, 0), (900, 0), (901, 15), (3600, 45),
                                           (3601, 60), (10**6, 465)])
def test_length_bins_are_right_closed(seconds, lower):
    assert length_bin(seconds) == lower


def test_heatmap_cell_probability_and_empty_cells():
    invs = [inv(600, 9, COMPLETED) for _ in range(7)] + [inv(600, 9, EVICTED) for _ in range(3)]
    invs += [inv(600, 9, CANCELLED), inv(600, 9, TRUNCATED)]
    cells = {(c.length_bin, c.hour): c for c in heatmap(report(invocations=invs))}
    assert len(cells) == 32 * 24
    assert cells[(0, 9)].probability == 0.7 and cells[(0, 9)].samples == 10
    assert cells[(0, 10)].probability is None and cells[(0, 10)].samples == 0


def test_pooled_probability():
    invs = [inv(4000, 2, EVICTED), inv(5000, 2, EVICTED), inv(4000, 2, COMPLETED),
            inv(600, 2, COMPLETED)]
    cells = heatmap(report(invocations=invs))
    assert pooled_probability(cells, 2, 60) == pytest.approx(1 / 3)
    assert pooled_probability(cells, 5, 60) is None


def test_energy_summary_examples():
    s = EnergySummary("x", Fraction(2_000_000), Fraction(1_000_000), Fraction(0))
    assert s.mwh() == 3.0
    assert s.bad_fraction == pytest.approx(1 / 3)
    assert compare_energy(s, s) == {"base": "x", "other": "x", "total_pct": 0.0,
                                    "bad_pct": 0.0, "good_pct": 0.0}
    assert percent_change(Fraction(100), Fraction(66)) == -34.0
    assert percent_change(Fraction(0), Fraction(0)) == 0.0


def test_energy_summary_matches_ledger_exactly():
    led = EnergyLedger()
    led.workflow_keys |= {("w", "A"), ("w", "B")}
    led.add(("w", "A"), Fraction(1, 3), True)
    led.add(("w", "B"), Fraction(2, 7), False)
    led.add(("", "bg0"), Fraction(5), True)
    s = energy_summary(report(ledger=led))
    assert (s.good_wh, s.bad_wh) == (Fraction(1, 3), Fraction(2, 7))
    assert energy_summary(report(ledger=led), "all").good_wh == Fraction(16, 3)


def test_csv_writers(tmp_path):
    rep = report([outcome(0), outcome(1), outcome(None)])
    write_success([success_counts(rep, (0.1, 1.0))], tmp_path / "s.csv")
    write_cdf(p_cdf(rep), tmp_path / "c.csv")
    write_heatmap(heatmap(rep), tmp_path / "h.csv")
    write_energy([energy_summary(rep)], tmp_path / "e.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows == [["P", "count", "total", "policy"], ["0.1", "1", "3", "single"],
                    ["1.0", "2", "3", "single"]]
    assert next(csv.reader(open(tmp_path / "c.csv"))) == ["p", "fraction"]
    assert next(csv.reader(open(tmp_path / "h.csv"))) == ["length_bin", "hour", "probability",
                                                          "samples"]
    assert list(csv.reader(open(tmp_path / "e.csv")))[1] == ["single", "0.0", "0.0", "0.0"]
