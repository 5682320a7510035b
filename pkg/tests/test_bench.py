"""Event-window selection and the benchmark panel."""

import math
from datetime import datetime, timedelta

import numpy as np
import pytest

from hydrocal.bench import (
    BenchReport,
    GaugeTask,
    _window_score,
    calibration_episode_config,
    make_task,
    run_benchmark,
    select_event_window,
)


def hourly(n, start=datetime(2020, 1, 1)):
    return [start + timedelta(hours=h) for h in range(n)]


def triangular_event_series(n_hours, peak_idx, t_rise, t_recess, ratio):
    """Series whose best window has the given rise/recess spans and a peak
    exactly ``ratio`` times the window mean; unique min and max."""
    q = np.ones(n_hours)
    m = peak_idx - t_rise
    q[m] = 0.5
    rise = np.linspace(0.5, 2.0, t_rise + 1)
    q[m:peak_idx + 1] = rise
    fall = np.linspace(2.0, 0.6, t_recess + 1)
    q[peak_idx:peak_idx + t_recess + 1] = fall
    q[peak_idx + t_recess] = 0.4  # first value below the pre-event level
    # scale the peak so that peak / window-mean == ratio exactly
    rest = q.sum() - q[peak_idx]
    q[peak_idx] = ratio * rest / (n_hours - ratio)
    assert q[peak_idx] == max(q)
    return q


class TestWindowScore:
    def test_formula_spot_value(self):
        # peak/mean 9, rise 16 h, recession 64 h -> log10(10) * sqrt(1024) = 32
        q = triangular_event_series(1440, peak_idx=400, t_rise=16, t_recess=64,
                                    ratio=9.0)
        score = _window_score(q)
        assert score == pytest.approx(32.0, abs=1e-9)

    def test_flat_series_scores_equal(self):
        q = np.ones(24 * 70)
        stamps = hourly(q.shape[0])
        start, end, score = select_event_window(stamps, q, window_days=60)
        assert start == stamps[0]  # earliest window wins the tie
        scores = {_window_score(q[s:s + 1440])
                  for s in range(0, q.shape[0] - 1440 + 1, 24)}
        assert len(scores) == 1

    def test_selected_window_contains_the_flood(self):
        n = 24 * 120
        q = triangular_event_series(n, peak_idx=24 * 80, t_rise=12, t_recess=48,
                                    ratio=6.0)
        stamps = hourly(n)
        start, end, _ = select_event_window(stamps, q, window_days=60)
        peak_time = stamps[24 * 80]
        assert start <= peak_time <= end

    def test_matches_brute_force_argmax(self):
        rng = np.random.default_rng(8)
        n = 24 * 120
        q = np.abs(rng.gamma(1.5, 1.0, size=n))
        q[24 * 30:24 * 30 + 40] += rng.uniform(5, 15, size=40)
        q[24 * 90:24 * 90 + 30] += rng.uniform(2, 25, size=30)
        stamps = hourly(n)
        start, end, score = select_event_window(stamps, q, window_days=60)

        # independent brute force over every daily start
        best = (-math.inf, None)
        for s in range(0, n - 1440 + 1, 24):
            w = q[s:s + 1440]
            peak = int(np.argmax(w))
            mean = w.mean()
            pre = w[:peak + 1]
            mn = int(np.argmin(pre))
            rise = peak - mn
            recess = w.shape[0] - 1 - peak
            for j in range(peak + 1, w.shape[0]):
                if w[j] < w[mn]:
                    recess = j - peak
                    break
            cand = math.log10(w[peak] / mean + 1.0) * math.sqrt(rise * recess)
            if cand > best[0]:
                best = (cand, s)
        assert score == pytest.approx(best[0], abs=1e-12)
        assert start == stamps[best[1]]

    def test_short_series_rejected(self):
        with pytest.raises(ValueError, match="shorter"):
            select_event_window(hourly(100), np.ones(100), window_days=60)


class TestGaugeTask:
    def test_from_control_file(self, bundle):
        task = make_task(bundle.control_path, split="test")
        assert task.gauge_id == "synth-0042"
        assert task.basin_area_km2 == pytest.approx(2.56)
        assert task.target_nse == pytest.approx(0.8075)

    def test_split_validated(self, bundle):
        with pytest.raises(ValueError, match="split"):
            make_task(bundle.control_path, split="validation")

    def test_short_window_rejected(self, bundle):
        task = make_task(bundle.control_path)
        with pytest.raises(ValueError, match="at least one day"):
            GaugeTask(
                gauge_id="x", split="test", basin_area_km2=1.0,
                window_start=task.window_start,
                window_end=task.window_start + timedelta(hours=3),
                control_path=task.control_path, target_nse=0.8,
            )


class TestRunBenchmark:
    def test_single_cell_report(self, bundle):
        task = make_task(bundle.control_path)
        report = run_benchmark([task], ["random_search"], rounds=2, sweeps=2,
                               seeds=[0], max_workers=1)
        assert len(report.cells) == 1
        cell = report.cells[0]
        assert cell.error is None
        assert cell.n_sims <= 4
        agg = report.aggregates()
        assert agg["random_search"]["mean_nse"] == pytest.approx(cell.best_nse)

    def test_aggregate_identity(self, bundle):
        task = make_task(bundle.control_path)
        report = run_benchmark([task], ["random_search"], rounds=1, sweeps=2,
                               seeds=[0, 1, 2], max_workers=2)
        scores = [c.best_nse for c in report.cells]
        agg = report.aggregates()["random_search"]
        assert agg["mean_nse"] == pytest.approx(float(np.mean(scores)))
        assert agg["median_nse"] == pytest.approx(float(np.median(scores)))

    def test_deterministic_under_seeds(self, bundle):
        task = make_task(bundle.control_path)
        kwargs = dict(rounds=1, sweeps=3, seeds=[0, 1], max_workers=2)
        r1 = run_benchmark([task], ["dds"], **kwargs)
        r2 = run_benchmark([task], ["dds"], **kwargs)
        assert r1.to_dict() == r2.to_dict()

    def test_cell_failure_recorded_not_fatal(self, bundle, tmp_path):
        bad = GaugeTask(
            gauge_id="broken", split="test", basin_area_km2=1.0,
            window_start=datetime(2020, 1, 1), window_end=datetime(2020, 2, 1),
            control_path=tmp_path / "missing-control.txt", target_nse=0.8,
        )
        good = make_task(bundle.control_path)
        report = run_benchmark([bad, good], ["random_search"], rounds=1,
                               sweeps=1, seeds=[0], max_workers=1)
        by_gauge = {c.gauge: c for c in report.cells}
        assert by_gauge["broken"].error is not None
        assert by_gauge["synth-0042"].error is None

    def test_text_table_renders(self, bundle):
        task = make_task(bundle.control_path)
        report = run_benchmark([task], ["random_search"], rounds=1, sweeps=1,
                               seeds=[0], max_workers=1)
        table = report.to_table()
        assert "agent" in table and "random_search" in table
        assert "mean NSE" in table

    def test_empty_tasks_rejected(self):
        with pytest.raises(ValueError):
            run_benchmark([], ["dds"])

    def test_dds_beats_random_on_panel_mean(self, tmp_path):
        # paired panel: 3 basins x 5 seeds, unattainable target so both
        # agents spend the full budget
        from hydrocal.synth import synth_basin

        tasks = []
        for seed in (1, 2, 3):
            bundle = synth_basin(tmp_path / f"panel{seed}", seed=seed,
                                 target_nse=1.01)
            tasks.append(make_task(bundle.control_path))
        report = run_benchmark(tasks, ["dds", "random_search"], rounds=6,
                               sweeps=10, seeds=[0, 1, 2, 3, 4], max_workers=4)
        agg = report.aggregates()
        assert agg["dds"]["cells"] == 15 and agg["random_search"]["cells"] == 15
        assert agg["dds"]["mean_nse"] >= agg["random_search"]["mean_nse"]


class TestEpisodeSizing:
    def test_calibration_config_outlasts_the_budget(self, bundle):
        cfg = calibration_episode_config(bundle.control_path, 200)
        assert cfg.max_turns >= 3 * 200
        assert cfg.no_improve_rounds >= 200
