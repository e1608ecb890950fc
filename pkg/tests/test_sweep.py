import logging
import os
import time

import pytest
from hypothesis import given, strategies as st

import constants
from ai.transfer import TransferMode
from harness.config import build_sweep_spec, load_document
from harness.sweep import (METRIC_FIELDS, aggregate_report, build_grid, mix_seed, read_rows, report_paths,
                           splitmix64, sweep, top_k_runs, write_report, write_rows)
from slicing.types import SlicingError


def test_splitmix64_known_value():
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_mixed_seeds_fit_in_63_bits():
    seeds = {mix_seed(2023, i) for i in range(100)}
    assert len(seeds) == 100
    assert all(0 <= s < 2 ** 63 for s in seeds)
    assert mix_seed(2023, 5) == mix_seed(2023, 5)
    assert mix_seed(2023, 5) != mix_seed(2024, 5)


def test_default_grid_size():
    doc = load_document(constants.CONFIG_PATH)
    grid = build_grid(doc, build_sweep_spec(doc))
    per_scenario = 4 * 2 + 2 * (4 * 4 * 2) + 4 * 4 * 5 * 2
    assert per_scenario == 232
    assert len(grid) == 2 * per_scenario
    assert len({run.run_id for run in grid}) == len(grid)
    assert [run.index for run in grid] == list(range(len(grid)))


def test_grid_shape(small_doc):
    grid = build_grid(small_doc, build_sweep_spec(small_doc))
    similar = [run for run in grid if run.scenario == "similar"]
    assert [run.run_id for run in similar] == [
        "similar-none-d0.99-s1",
        "similar-reuse-d0.99-t0.9-s1",
        "similar-distill-d0.99-t0.9-s1",
        "similar-hybrid-d0.99-t0.9-g1-s1",
        "similar-hybrid-d0.99-t0.9-g0.3-s1",
    ]
    assert similar[0].expert_key is None
    assert {run.expert_key for run in grid if run.mode != TransferMode.NONE} == {
        "3slice/pattern1/seed99", "3slice/pattern2/seed99"}
    # every grid point with the same seed sees the same traffic; agent seeds differ per run
    assert {run.traffic_seed for run in grid} == {mix_seed(7, 1)}
    assert [run.run_seed for run in grid] == [mix_seed(mix_seed(7, 1), run.index) for run in grid]
    assert len({run.run_seed for run in grid}) == len(grid)


def row(run_id, mode, initial, variance, steps, avg, scenario="similar", gamma="", reuse=0, distilled=0):
    return {"run_id": run_id, "mode": mode, "scenario": scenario, "initial_reward": str(initial),
            "variance": str(variance), "steps_to_converge": "" if steps is None else str(steps),
            "converged": "0" if steps is None else "1", "avg_normalized_reward": str(avg), "gamma": str(gamma),
            "transfer_expert_reuse": str(reuse), "transfer_distilled": str(distilled)}


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 40))
def test_top_k_keeps_the_best(values, k):
    rows = [row(f"r{i:02d}", "none", 0, 0, None, v) for i, v in enumerate(values)]
    top = top_k_runs(rows, k)
    assert len(top) == min(k, len(rows))
    kept = [float(r["avg_normalized_reward"]) for r in top]
    assert kept == sorted(kept, reverse=True)
    dropped = [float(r["avg_normalized_reward"]) for r in rows if r not in top]
    assert all(v <= min(kept) for v in dropped)


def test_ties_are_broken_by_run_id():
    rows = [row("b", "none", 0, 0, None, 0.5), row("a", "none", 0, 0, None, 0.5)]
    assert [r["run_id"] for r in top_k_runs(rows, 2)] == ["a", "b"]


@pytest.fixture
def rows():
    return [
        row("n1", "none", 0.50, 0.020, 900, 0.70),
        row("n2", "none", 0.40, 0.030, 1100, 0.60),
        row("r1", "reuse", 0.55, 0.015, None, 0.72),
        row("h1", "hybrid", 0.60, 0.010, 500, 0.80, gamma=0.9, reuse=40, distilled=5),
        row("h2", "hybrid", 0.60, 0.010, 700, 0.78, gamma=0.3, reuse=15, distilled=30),
    ]


def test_summary_averages_the_top_runs(rows):
    report = aggregate_report(rows, top_k=1)
    none = next(r for r in report.summary if r["mode"] == "none")
    assert none["runs"] == 1
    assert none["initial_reward"] == pytest.approx(0.5)
    assert none["converged_pct"] == 100.0
    reuse = next(r for r in report.summary if r["mode"] == "reuse")
    assert reuse["converged_pct"] == 0.0
    assert reuse["steps_to_converge"] == ""


def test_hybrid_against_the_best_baseline(rows):
    deltas = {d["metric"]: d for d in aggregate_report(rows, top_k=1).deltas}
    assert deltas["initial_reward"]["best_baseline_mode"] == "reuse"
    assert deltas["initial_reward"]["delta_pct"] == pytest.approx(100 * 0.05 / 0.55)
    assert deltas["converged_pct"]["best_baseline_mode"] == "none"
    assert deltas["converged_pct"]["delta_pct"] == pytest.approx(0.0)
    assert deltas["variance"]["delta_pct"] == pytest.approx(100 * 0.005 / 0.015)
    assert deltas["variance"]["reference_delta_pct"] == 64.6


def test_gamma_breakdown(rows):
    gamma = aggregate_report(rows, top_k=5).gamma
    assert [g["gamma"] for g in gamma] == [0.9, 0.3]
    assert gamma[0]["transfer_expert_reuse"] == 40.0
    assert gamma[1]["transfer_distilled"] == 30.0
    # lower gamma converged later
    assert gamma[0]["spearman_rho"] == pytest.approx(1.0)


def test_warns_when_top_k_exceeds_the_runs(rows, caplog):
    with caplog.at_level(logging.WARNING, logger="harness.sweep"):
        aggregate_report(rows, top_k=64)
    assert any("exceeds" in r.getMessage() for r in caplog.records)


def test_metrics_file_round_trip(tmp_path, rows):
    write_rows(tmp_path / "metrics.csv", METRIC_FIELDS, rows)
    loaded = read_rows(tmp_path / "metrics.csv")
    assert [r["run_id"] for r in loaded] == [r["run_id"] for r in rows]
    assert list(loaded[0]) == METRIC_FIELDS


def test_empty_metrics_file(tmp_path):
    write_rows(tmp_path / "metrics.csv", METRIC_FIELDS, [])
    with pytest.raises(SlicingError, match="holds no runs"):
        write_report(tmp_path, 4, tmp_path / "report.csv")


def test_tiny_sweep_is_reproducible_across_workers(tmp_path, small_config_file):
    serial = sweep(small_config_file, tmp_path / "serial", jobs=1)
    parallel = sweep(small_config_file, tmp_path / "parallel", jobs=2)
    assert len(serial) == 10
    assert (tmp_path / "serial" / "metrics.csv").read_text() == (tmp_path / "parallel" / "metrics.csv").read_text()
    assert serial == parallel

    report = write_report(tmp_path / "serial", 4, tmp_path / "report.csv")
    assert all(path.is_file() for path in report_paths(tmp_path / "report.csv").values())
    assert len(report.summary) == 8
    assert len(report.gamma) == 4
    assert set(report.curves) == {(s, m) for s in ("similar", "different")
                                  for m in ("none", "reuse", "distill", "hybrid")}
    assert len(report.curves[("similar", "none")]) == 40


def test_second_sweep_reuses_the_experts(tmp_path, small_config_file, caplog):
    sweep(small_config_file, tmp_path, jobs=1)
    with caplog.at_level(logging.INFO, logger="harness.sweep"):
        sweep(small_config_file, tmp_path, jobs=1)
    assert not any("training experts" in r.getMessage() for r in caplog.records)


def test_hybrid_reuse_falls_with_gamma_on_shared_transfer_draws(tmp_path, small_config_file):
    rows = sweep(small_config_file, tmp_path, jobs=1)
    for scenario in ("similar", "different"):
        hybrid = {r["gamma"]: r for r in rows if r["scenario"] == scenario and r["mode"] == "hybrid"}
        high, low = hybrid[1.0], hybrid[0.3]
        assert high["traffic_seed"] == low["traffic_seed"]
        assert high["run_seed"] != low["run_seed"]
        consulted = [r["transfer_expert_reuse"] + r["transfer_distilled"] for r in (high, low)]
        assert consulted[0] == consulted[1] > 0
        assert high["transfer_distilled"] == 0
        assert high["transfer_expert_reuse"] > low["transfer_expert_reuse"]


@pytest.mark.slow
def test_reduced_sweep_orders_the_modes(tmp_path):
    jobs = min(8, os.cpu_count() or 1)
    start = time.perf_counter()
    rows = sweep(constants.CONFIG_PATH, tmp_path, jobs=jobs, preset="reduced")
    elapsed = time.perf_counter() - start
    report = write_report(tmp_path, 16, tmp_path / "report.csv")
    summary = {(r["scenario"], r["mode"]): r for r in report.summary}

    def metric(scenario, mode, name):
        return summary[(scenario, mode)][name]

    for scenario in ("similar", "different"):
        modes = ("none", "reuse", "distill", "hybrid")
        assert metric(scenario, "hybrid", "initial_reward") >= metric(scenario, "distill", "initial_reward")
        assert metric(scenario, "hybrid", "variance") == min(metric(scenario, m, "variance") for m in modes)
        assert metric(scenario, "hybrid", "converged_pct") == max(metric(scenario, m, "converged_pct")
                                                                  for m in modes)
    assert metric("similar", "hybrid", "initial_reward") >= metric("similar", "reuse", "initial_reward")
    assert metric("similar", "none", "initial_reward") == min(
        metric("similar", m, "initial_reward") for m in ("none", "reuse", "distill", "hybrid"))

    for scenario in ("similar", "different"):
        by_gamma = [g for g in report.gamma if g["scenario"] == scenario]
        assert [g["gamma"] for g in by_gamma] == [0.99, 0.9, 0.7, 0.5, 0.3]
        assert by_gamma[0]["spearman_rho"] >= 0.0
        reuse = [g["transfer_expert_reuse"] for g in by_gamma]
        assert all(a > b for a, b in zip(reuse, reuse[1:]))

    assert len(rows) == 2 * (1 + 4 + 4 + 4 * 5) * 2
    if jobs == 8:
        assert elapsed < 3600
