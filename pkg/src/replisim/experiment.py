"""Single runs and parameter sweeps: build inputs, simulate, write outputs."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .cluster import SimulationReport, check_conservation, run as simulate
from .config import ExperimentConfig
from .policy import QTable, RLPolicy, parse_policy
from .workload import generate, read_interactive, read_workload, write_interactive, write_workload

log = logging.getLogger(__name__)

SWEEP_AXES = ("phi", "policies", "balancing", "seeds")


@dataclass
class RunResult:
    config: ExperimentConfig
    report: SimulationReport
    policy: object
    summary: dict


def derive_seed(master: int, *coords) -> int:
    """Stable 63-bit seed from a master seed and grid coordinates."""
    blob = json.dumps([master, *coords], separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def load_inputs(config: ExperimentConfig, workload_seed: int | None = None):
    """Interactive sessions and workload rows, read from files where configured."""
    seed = config.seed if workload_seed is None else workload_seed
    interactive = workload = None
    for attr in ("interactive_trace", "workload_file", "qtable_in"):
        path = getattr(config, attr)
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(f"{attr} not found: {path}")
    if config.interactive_trace is not None:
        interactive = read_interactive(config.interactive_trace)
    if config.workload_file is not None:
        workload = read_workload(config.workload_file)
    if interactive is None or workload is None:
        gen_int, gen_wl = generate(config.workload_config(seed))
        interactive = gen_int if interactive is None else interactive
        workload = gen_wl if workload is None else workload
    return interactive, workload


def build_policy(config: ExperimentConfig, rng: np.random.Generator):
    name = config.policy.partition(":")[0]
    if name != "rl":
        return parse_policy(config.policy, max_replicas=config.max_replicas)
    a = int(config.policy.partition(":")[2] or config.max_replicas)
    qtable = None
    if config.qtable_in is not None:
        qtable = QTable.from_csv(config.qtable_in, max_replicas=a, n=config.rl_bins)
    return RLPolicy(rng, a, P=config.rl_P, n=config.rl_bins, schedule=config.epsilon.build(),
                    qtable=qtable)


def execute(config: ExperimentConfig, inputs=None, engine_seed: int | None = None) -> RunResult:
    """Simulate one configuration and compute its summary (no files written)."""
    interactive, workload = inputs if inputs is not None else load_inputs(config)
    seed = config.seed if engine_seed is None else engine_seed
    engine_ss, policy_ss = np.random.SeedSequence(seed).spawn(2)
    policy = build_policy(config, np.random.default_rng(policy_ss))
    report = simulate(config.cluster_config(), interactive, workload, policy,
                      np.random.default_rng(engine_ss))
    return RunResult(config, report, policy, summarize(config, report))


def summarize(config: ExperimentConfig, report: SimulationReport) -> dict:
    success = metrics.success_counts(report, config.P_grid)
    wf = metrics.energy_summary(report, "workflow")
    bg = metrics.energy_summary(report, "background")
    return {
        "policy": report.policy,
        "seed": config.seed,
        "config_hash": config.digest(),
        "phi": config.phi,
        "balancing": config.balancing,
        "workflows": len(report.workflows),
        "incomplete": report.incomplete,
        "success": {repr(P): c for P, c in zip(success.P_grid, success.counts)},
        "energy_wh": {
            "good": float(wf.good_wh),
            "bad": float(wf.bad_wh),
            "total": float(wf.total_wh),
            "idle": float(wf.idle_wh),
            "background_good": float(bg.good_wh),
            "background_bad": float(bg.bad_wh),
        },
        "background_tasks": report.background_tasks,
        "background_completed": report.background_completed,
        "decisions": len(report.decisions),
        "invocations": len(report.invocations),
        "horizon": report.horizon,
        "conservation_violations": len(check_conservation(report)),
    }


def write_outputs(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report, config = result.report, result.config
    (out / "report.json").write_text(json.dumps(result.summary, sort_keys=True, indent=2) + "\n")
    metrics.write_invocations(report, out / "invocations.csv")
    metrics.write_workflows(report, out / "workflows.csv")
    metrics.write_decisions(report, out / "decisions.csv")
    metrics.write_success([metrics.success_counts(report, config.P_grid)], out / "success.csv")
    try:
        cdf = metrics.p_cdf(report)
    except metrics.EmptyReportError:
        cdf = []
    metrics.write_cdf(cdf, out / "cdf.csv")
    metrics.write_heatmap(metrics.heatmap(report), out / "heatmap.csv")
    metrics.write_energy([metrics.energy_summary(report)], out / "energy.csv")
    if isinstance(result.policy, RLPolicy):
        result.policy.qtable.to_csv(out / "qtable.csv")


def summary_line(summary: dict) -> str:
    first_P = next(iter(summary["success"]))
    e = summary["energy_wh"]
    return (f"{summary['policy']} seed={summary['seed']} workflows={summary['workflows']} "
            f"success@{first_P}={summary['success'][first_P]} "
            f"energy={e['total'] / 1e6:.4f}MWh bad={e['bad'] / 1e6:.4f}MWh")


def run_single(config: ExperimentConfig, out: str | Path | None = None,
               write_traces: bool = False) -> RunResult:
    out = Path(config.out if out is None else out)
    inputs = load_inputs(config)
    result = execute(config, inputs)
    write_outputs(result, out)
    if write_traces:
        write_interactive(inputs[0], out / "interactive.csv")
        write_workload(inputs[1], out / "workload.csv")
    return result


# --- sweeps -------------------------------------------------------------------------

def parse_sweep(data: dict) -> dict:
    unknown = set(data) - set(SWEEP_AXES) - {"keep_runs"}
    if unknown:
        raise ValueError(f"unknown sweep axes: {', '.join(sorted(unknown))}")
    for axis in SWEEP_AXES:
        if axis in data and not isinstance(data[axis], list):
            raise ValueError(f"sweep axis {axis!r} must be a list")
    return data


def grid_points(base: ExperimentConfig, sweep: dict) -> list[tuple[dict, int]]:
    """(overrides, replicate seed) for every point of the grid, in a fixed order."""
    seeds = sweep.get("seeds") or [base.seed]
    phis = sweep.get("phi") or [base.phi]
    policies = sweep.get("policies") or [base.policy]
    modes = sweep.get("balancing") or [base.balancing]
    return [({"phi": phi, "policy": pol, "balancing": mode}, seed)
            for seed, phi, pol, mode in itertools.product(seeds, phis, policies, modes)]


def _sweep_worker(args):
    base_json, overrides, seed, keep_dir = args
    try:
        config = ExperimentConfig.model_validate(
            {**json.loads(base_json), **overrides, "seed": seed})
        coords = [overrides["phi"], overrides["policy"], overrides["balancing"]]
        # workload shared by all points with the same replicate seed
        inputs = load_inputs(config, workload_seed=seed)
        result = execute(config, inputs, engine_seed=derive_seed(seed, *coords))
        if keep_dir is not None:
            write_outputs(result, Path(keep_dir))
        return overrides, seed, result.summary, None
    except Exception as exc:  # recorded per point, the sweep carries on
        return overrides, seed, None, f"{type(exc).__name__}: {exc}"


SWEEP_COLUMNS = ["policy", "phi", "balancing", "seed", "config_hash", "workflows", "incomplete",
                 "P", "success", "good_wh", "bad_wh", "total_wh"]


def run_sweep(base: ExperimentConfig, sweep: dict, out: str | Path | None = None,
              workers: int = 1) -> list[dict]:
    """Run every grid point and write ``sweep.csv`` plus ``sweep_failures.csv``."""
    sweep = parse_sweep(sweep)
    out = Path(base.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    if not any(sweep.get(axis) for axis in SWEEP_AXES):
        return [run_single(base, out).summary]

    base_json = base.model_dump_json()
    jobs = []
    for i, (overrides, seed) in enumerate(grid_points(base, sweep)):
        keep = str(out / "runs" / f"{i:04d}") if sweep.get("keep_runs") else None
        jobs.append((base_json, overrides, seed, keep))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]

    summaries = []
    with open(out / "sweep.csv", "w", newline="") as fh, \
            open(out / "sweep_failures.csv", "w", newline="") as ffh:
        w = csv.writer(fh)
        fw = csv.writer(ffh)
        w.writerow(SWEEP_COLUMNS)
        fw.writerow(["policy", "phi", "balancing", "seed", "error"])
        for overrides, seed, summary, error in results:
            if error is not None:
                log.warning("sweep point %s seed=%s failed: %s", overrides, seed, error)
                fw.writerow([overrides["policy"], overrides["phi"], overrides["balancing"], seed,
                             error])
                continue
            summaries.append(summary)
            e = summary["energy_wh"]
            for P, count in summary["success"].items():
                w.writerow([summary["policy"], repr(summary["phi"]), summary["balancing"], seed,
                            summary["config_hash"], summary["workflows"], summary["incomplete"],
                            P, count, repr(e["good"]), repr(e["bad"]), repr(e["total"])])
    return summaries
