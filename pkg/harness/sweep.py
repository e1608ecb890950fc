"""
Hyper-parameter sweeps over transfer modes and the aggregate report.

A sweep trains one expert per training pattern, computes the oracle
average once per (deployment pattern, seed), then runs every grid point.
Runs are independent processes; the report phase is serial.
"""
import csv
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

import constants
from ai.oracle import oracle_best_reward
from ai.policy_store import list_keys
from ai.transfer import ActionSource, TransferMode
from harness.config import SweepSpec, build_run_config, build_sweep_spec, load_document
from harness.metrics import smoothed_curve
from harness.runner import RunAborted, context_key_for, deploy_run, load_traces, train_expert
from slicing.types import SlicingError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MASK64 = (1 << 64) - 1
MASK63 = (1 << 63) - 1

# expected relative improvement (%) of hybrid transfer over the best other mode
REFERENCE_DELTAS = {"initial_reward": 7.7, "converged_pct": 20.7, "variance": 64.6}

METRIC_FIELDS = (["run_id", "mode", "seed", "theta0", "nu", "gamma", "initial_reward", "variance",
                  "steps_to_converge", "converged", "avg_normalized_reward",
                  "scenario", "eps_decay", "traffic_seed", "run_seed", "oracle_avg"]
                 + [f"n_{source}" for source in ActionSource]
                 + [f"transfer_{source}" for source in ActionSource])
SUMMARY_FIELDS = ["scenario", "mode", "runs", "initial_reward", "variance", "steps_to_converge",
                  "converged_pct", "avg_normalized_reward"]
GAMMA_FIELDS = ["scenario", "gamma", "runs", "initial_reward", "variance", "steps_to_converge",
                "converged_pct", "avg_normalized_reward", "transfer_expert_reuse", "transfer_distilled",
                "spearman_rho"]
DELTA_FIELDS = ["scenario", "metric", "hybrid", "best_baseline_mode", "best_baseline", "delta_pct",
                "reference_delta_pct"]


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(base_seed: int, index: int) -> int:
    """Per-run seed: splitmix64(base ^ splitmix64(index)) truncated to 63 bits."""
    return splitmix64((base_seed & MASK64) ^ splitmix64(index & MASK64)) & MASK63


@dataclass(frozen=True)
class RunSpec:
    """One grid point of a sweep."""
    index: int
    scenario: str
    mode: TransferMode
    seed: int
    traffic_seed: int
    run_seed: int
    eps_decay: float
    deploy_pattern: str
    expert_key: Optional[str]
    theta: Optional[float] = None
    gamma: Optional[float] = None

    @property
    def run_id(self) -> str:
        parts = [self.scenario, str(self.mode), f"d{self.eps_decay:g}"]
        if self.theta is not None:
            parts.append(f"t{self.theta:g}")
        if self.gamma is not None:
            parts.append(f"g{self.gamma:g}")
        parts.append(f"s{self.seed}")
        return "-".join(parts)


def expert_key_for(doc: dict, spec: SweepSpec, pattern: str) -> str:
    config = build_run_config(doc, pattern, transfer_overrides={"mode": TransferMode.NONE},
                              seed=spec.expert_seed, expert_keys=())
    return context_key_for(config)


def build_grid(doc: dict, spec: SweepSpec) -> List[RunSpec]:
    """
    Cartesian product per scenario and mode. Theta only varies for modes
    that transfer; gamma only for the hybrid mode. Runs sharing a grid seed
    share the traffic seed, so modes are compared on identical arrivals and
    identical transfer draws; the agent seed is mixed from the run index.
    """
    runs = []
    for scenario in spec.scenarios:
        expert_key = expert_key_for(doc, spec, scenario.train_pattern)
        for mode in spec.modes:
            thetas = spec.transfer_rates if mode != TransferMode.NONE else (None,)
            gammas = spec.gammas if mode == TransferMode.HYBRID else (None,)
            for decay in spec.exploration_decays:
                for theta in thetas:
                    for gamma in gammas:
                        for seed in spec.seeds:
                            traffic_seed = mix_seed(spec.base_seed, seed)
                            runs.append(RunSpec(
                                index=len(runs), scenario=scenario.name, mode=mode, seed=seed,
                                traffic_seed=traffic_seed, run_seed=mix_seed(traffic_seed, len(runs)),
                                eps_decay=decay,
                                deploy_pattern=scenario.deploy_pattern,
                                expert_key=expert_key if mode != TransferMode.NONE else None,
                                theta=theta, gamma=gamma))
    return runs


def _run_tasks(fn: Callable, tasks: Sequence[tuple], jobs: int) -> list:
    """Apply ``fn`` to every task, in order; in a process pool when ``jobs`` > 1."""
    if jobs <= 1:
        return [fn(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        futures = [executor.submit(fn, *task) for task in tasks]
        return [future.result() for future in futures]


def _train_task(doc: dict, spec: SweepSpec, pattern: str, policy_dir: str, out_dir: str) -> str:
    config = build_run_config(doc, pattern, transfer_overrides={"mode": TransferMode.NONE},
                              seed=spec.expert_seed, total_steps=spec.expert_steps, expert_keys=())
    record, _ = train_expert(config, policy_dir, out_dir)
    return record.context_key


def _oracle_task(doc: dict, pattern: str, traffic_seed: int) -> float:
    config = build_run_config(doc, pattern, transfer_overrides={"mode": TransferMode.NONE}, expert_keys=())
    return oracle_best_reward(config.env, traffic_seed, config.oracle_windows, load_traces(config.env)).average


def _deploy_task(doc: dict, run: RunSpec, policy_dir: str, out_dir: str, oracle_avg: float) -> Optional[dict]:
    transfer = {"mode": run.mode}
    if run.theta is not None:
        transfer["theta"] = run.theta
    if run.gamma is not None:
        transfer["gamma"] = run.gamma
    config = build_run_config(doc, run.deploy_pattern, transfer_overrides=transfer,
                              explore_overrides={"decay": run.eps_decay}, seed=run.traffic_seed,
                              agent_seed=run.run_seed,
                              expert_keys=(run.expert_key,) if run.expert_key else ())
    try:
        result = deploy_run(config, policy_dir, out_dir, run_id=run.run_id, oracle_avg=oracle_avg)
    except RunAborted as exc:
        logger.warning("run %s aborted: %s", run.run_id, exc)
        return None
    metrics = result.metrics
    row = {
        "run_id": run.run_id,
        "mode": str(run.mode),
        "seed": run.seed,
        "theta0": config.transfer.theta if run.mode != TransferMode.NONE else "",
        "nu": config.transfer.nu if run.mode != TransferMode.NONE else "",
        "gamma": run.gamma if run.gamma is not None else "",
        "initial_reward": metrics.initial_reward,
        "variance": metrics.reward_variance,
        "steps_to_converge": metrics.steps_to_converge if metrics.converged else "",
        "converged": int(metrics.converged),
        "avg_normalized_reward": metrics.avg_normalized_reward,
        "scenario": run.scenario,
        "eps_decay": run.eps_decay,
        "traffic_seed": run.traffic_seed,
        "run_seed": run.run_seed,
        "oracle_avg": oracle_avg,
    }
    for source in ActionSource:
        row[f"n_{source}"] = metrics.action_source_counts.get(str(source), 0)
        row[f"transfer_{source}"] = metrics.transfer_source_counts.get(str(source), 0)
    return row


def write_rows(path: PathLike, fieldnames: Sequence[str], rows: Sequence[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


def read_rows(path: PathLike) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sweep(config_path: PathLike, out_dir: PathLike, jobs: int = 1,
          preset: Optional[str] = None) -> List[dict]:
    """
    Run the grid of ``config_path`` and write ``<out_dir>/metrics.csv``.
    ``preset`` names an entry of ``sweep_presets`` laid over the ``sweep`` section.

    Experts already present in ``<out_dir>/policies`` are reused.
    """
    doc = load_document(config_path)
    spec = build_sweep_spec(doc, preset)
    out_dir = Path(out_dir)
    policy_dir = out_dir / "policies"
    grid = build_grid(doc, spec)
    logger.info("sweep: %d runs over %d scenarios with %d jobs", len(grid), len(spec.scenarios), jobs)

    existing = set(list_keys(policy_dir))
    to_train = sorted({s.train_pattern for s in spec.scenarios
                       if expert_key_for(doc, spec, s.train_pattern) not in existing})
    if to_train:
        logger.info("sweep: training experts for %s", ", ".join(to_train))
        _run_tasks(_train_task, [(doc, spec, p, str(policy_dir), str(out_dir)) for p in to_train], jobs)

    oracle_keys = sorted({(run.deploy_pattern, run.traffic_seed) for run in grid})
    averages = _run_tasks(_oracle_task, [(doc, p, s) for p, s in oracle_keys], jobs)
    oracle = dict(zip(oracle_keys, averages))

    rows = _run_tasks(_deploy_task, [(doc, run, str(policy_dir), str(out_dir),
                                      oracle[(run.deploy_pattern, run.traffic_seed)]) for run in grid], jobs)
    rows = [row for row in rows if row is not None]
    write_rows(out_dir / "metrics.csv", METRIC_FIELDS, rows)
    logger.info("sweep: %d of %d runs completed; metrics in %s", len(rows), len(grid), out_dir / "metrics.csv")
    return rows


def _float(row: dict, key: str) -> float:
    value = row.get(key, "")
    return float(value) if value not in ("", None) else math.nan


def top_k_runs(rows: Sequence[dict], k: int) -> List[dict]:
    """The k rows with the highest avg_normalized_reward; ties broken by run_id."""
    return sorted(rows, key=lambda r: (-_float(r, "avg_normalized_reward"), r["run_id"]))[:k]


def _summarize(rows: Sequence[dict]) -> dict:
    steps = [_float(r, "steps_to_converge") for r in rows if int(r["converged"])]
    return {
        "runs": len(rows),
        "initial_reward": float(np.mean([_float(r, "initial_reward") for r in rows])),
        "variance": float(np.mean([_float(r, "variance") for r in rows])),
        "steps_to_converge": float(np.mean(steps)) if steps else "",
        "converged_pct": 100.0 * sum(int(r["converged"]) for r in rows) / len(rows),
        "avg_normalized_reward": float(np.mean([_float(r, "avg_normalized_reward") for r in rows])),
    }


def _select(rows: Sequence[dict], top_k: int, label: str) -> List[dict]:
    if top_k > len(rows):
        logger.warning("%s: top_k %d exceeds the %d available runs; using all", label, top_k, len(rows))
    return top_k_runs(rows, top_k)


@dataclass
class Report:
    summary: List[dict] = field(default_factory=list)
    gamma: List[dict] = field(default_factory=list)
    curves: Dict[Tuple[str, str], np.ndarray] = field(default_factory=dict)
    deltas: List[dict] = field(default_factory=list)


def _relative(hybrid: float, baseline: float) -> float:
    return 100.0 * (hybrid - baseline) / abs(baseline) if baseline else math.nan


def _deltas(scenario: str, summary: Dict[str, dict]) -> List[dict]:
    """Hybrid against the best other mode for each headline metric."""
    if TransferMode.HYBRID.value not in summary:
        return []
    hybrid = summary[TransferMode.HYBRID.value]
    others = {mode: s for mode, s in summary.items() if mode != TransferMode.HYBRID.value}
    if not others:
        return []
    rows = []
    for metric, better_high in (("initial_reward", True), ("converged_pct", True), ("variance", False)):
        pick = max if better_high else min
        mode = pick(others, key=lambda m: others[m][metric])
        base = others[mode][metric]
        delta = _relative(hybrid[metric], base) if better_high else -_relative(hybrid[metric], base)
        rows.append({"scenario": scenario, "metric": metric, "hybrid": hybrid[metric],
                     "best_baseline_mode": mode, "best_baseline": base, "delta_pct": delta,
                     "reference_delta_pct": REFERENCE_DELTAS[metric]})
    return rows


def _mean_curve(rows: Sequence[dict], runs_dir: Optional[Path]) -> Optional[np.ndarray]:
    if runs_dir is None:
        return None
    curves = []
    for row in rows:
        path = runs_dir / f"{row['run_id']}.csv"
        if not path.is_file():
            logger.warning("no per-step log for %s", row["run_id"])
            continue
        curves.append([float(r["reward"]) for r in read_rows(path)])
    if not curves:
        return None
    length = min(len(c) for c in curves)
    return smoothed_curve(np.mean([c[:length] for c in curves], axis=0))


def aggregate_report(rows: Sequence[dict], top_k: int = constants.TOP_K,
                     runs_dir: Optional[PathLike] = None) -> Report:
    """
    Per (scenario, mode): means of the four metrics over the top-k runs,
    plus the hybrid per-gamma breakdown and hybrid-vs-baseline deltas.
    """
    runs_dir = Path(runs_dir) if runs_dir is not None else None
    grouped: Dict[Tuple[str, str], List[dict]] = defaultdict(list)
    for row in rows:
        grouped[(row.get("scenario", ""), row["mode"])].append(row)

    report = Report()
    by_scenario: Dict[str, Dict[str, dict]] = defaultdict(dict)
    for (scenario, mode), group in sorted(grouped.items()):
        selected = _select(group, top_k, f"{scenario}/{mode}")
        summary = _summarize(selected)
        by_scenario[scenario][mode] = summary
        report.summary.append({"scenario": scenario, "mode": mode, **summary})
        curve = _mean_curve(selected, runs_dir)
        if curve is not None:
            report.curves[(scenario, mode)] = curve

        if mode == TransferMode.HYBRID.value:
            report.gamma.extend(_gamma_breakdown(scenario, group, top_k))

    for scenario, summary in sorted(by_scenario.items()):
        report.deltas.extend(_deltas(scenario, summary))
    return report


def _gamma_breakdown(scenario: str, hybrid_rows: Sequence[dict], top_k: int) -> List[dict]:
    """
    Hybrid runs grouped by gamma. Spearman rho is taken between decreasing
    gamma and steps to converge over the top-k hybrid runs, counting a run
    that never converged as its full length.
    """
    selected = _select(hybrid_rows, top_k, f"{scenario}/hybrid gamma")
    gammas = np.array([_float(r, "gamma") for r in selected])
    steps = np.array([_float(r, "steps_to_converge") if int(r["converged"]) else math.inf for r in selected])
    steps[np.isinf(steps)] = constants.TOTAL_STEPS + 1
    rho = math.nan
    if len(set(gammas)) > 1 and len(set(steps)) > 1:
        rho = float(stats.spearmanr(-gammas, steps)[0])

    out = []
    by_gamma: Dict[float, List[dict]] = defaultdict(list)
    for row in hybrid_rows:
        by_gamma[_float(row, "gamma")].append(row)
    for gamma in sorted(by_gamma, reverse=True):
        chosen = top_k_runs(by_gamma[gamma], top_k)
        out.append({
            "scenario": scenario, "gamma": gamma, **_summarize(chosen),
            "transfer_expert_reuse": float(np.mean([_float(r, "transfer_expert_reuse") for r in chosen])),
            "transfer_distilled": float(np.mean([_float(r, "transfer_distilled") for r in chosen])),
            "spearman_rho": rho,
        })
    return out


def report_paths(out_file: PathLike) -> Dict[str, Path]:
    out_file = Path(out_file)
    stem = out_file.with_suffix("")
    return {
        "summary": out_file,
        "gamma": stem.with_name(stem.name + "_gamma.csv"),
        "curves": stem.with_name(stem.name + "_curves.csv"),
        "deltas": stem.with_name(stem.name + "_deltas.csv"),
    }


def write_report(in_dir: PathLike, top_k: int, out_file: PathLike) -> Report:
    """Read ``<in_dir>/metrics.csv`` and write the four report files."""
    in_dir = Path(in_dir)
    metrics_path = in_dir / "metrics.csv"
    if not metrics_path.is_file():
        raise SlicingError(f"no sweep results at {metrics_path}")
    rows = read_rows(metrics_path)
    if not rows:
        raise SlicingError(f"{metrics_path} holds no runs")
    report = aggregate_report(rows, top_k, in_dir / "runs")
    paths = report_paths(out_file)
    write_rows(paths["summary"], SUMMARY_FIELDS, report.summary)
    write_rows(paths["gamma"], GAMMA_FIELDS, report.gamma)
    write_rows(paths["deltas"], DELTA_FIELDS, report.deltas)

    curve_rows = []
    for (scenario, mode), curve in sorted(report.curves.items()):
        curve_rows.extend({"scenario": scenario, "mode": mode, "step": i, "reward": float(v)}
                          for i, v in enumerate(curve))
    write_rows(paths["curves"], ["scenario", "mode", "step", "reward"], curve_rows)

    for row in report.summary:
        logger.info("%s/%s: %d runs, start %.4f, variance %.5f, converged %.1f%%", row["scenario"],
                    row["mode"], row["runs"], row["initial_reward"], row["variance"], row["converged_pct"])
    for row in report.deltas:
        logger.info("%s %s: hybrid vs %s %+.1f%% (reference %.1f%%)", row["scenario"], row["metric"],
                    row["best_baseline_mode"], row["delta_pct"], row["reference_delta_pct"])
    return report
