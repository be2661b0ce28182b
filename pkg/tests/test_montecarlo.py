import csv

import numpy as np
import pytest

from icvspikes.montecarlo import (
    Replication, run_monte_carlo, summarize, table_row, write_replications_csv, write_table_csv,
)
from icvspikes.rmt import calibrate_threshold
from icvspikes.seeding import task_rng
from icvspikes.sim import SimConfig


def test_task_streams_are_distinct_and_stable():
    a = task_rng(1, 0).standard_normal(3)
    assert np.array_equal(a, task_rng(1, 0).standard_normal(3))
    assert not np.array_equal(a, task_rng(1, 1).standard_normal(3))
    assert not np.array_equal(a, task_rng(2, 0).standard_normal(3))


def test_worker_count_does_not_change_results():
    cfg = SimConfig.from_ratio((4.0,), 30, 1)
    one = run_monte_carlo(cfg, 4, seed=8, threads=1)
    two = run_monte_carlo(cfg, 4, seed=8, threads=2)
    for a, b in zip(one, two):
        assert a.rep == b.rep
        assert a.alpha_hat.tobytes() == b.alpha_hat.tobytes()
        assert a.zeta_hat == b.zeta_hat


def test_detection_recorded():
    cfg = SimConfig.from_ratio((6.0,), 30, 1)
    cal = calibrate_threshold(30, cfg.m, 50, seed=1)
    reps = run_monte_carlo(cfg, 3, seed=2, calibration=cal)
    assert all(r.K_hat is not None for r in reps)
    s = summarize(cfg, reps)
    assert set(s.detection) == {"exact_rate", "at_least_rate", "counts"}


def test_needs_a_spike():
    with pytest.raises(ValueError):
        run_monte_carlo(SimConfig.from_ratio((), 30, 1), 1, 0)


def test_summary_arithmetic():
    cfg = SimConfig.from_ratio((2.0,), 30, 1)
    reps = [
        Replication(0, 0.5, np.array([1.0]), np.array([1.5]), np.array([1.1])),
        Replication(1, 0.5, np.array([1.0]), np.array([1.5]), np.array([0.7])),
        Replication(2, 0.5, np.array([1.0]), np.array([1.5]), np.array([np.nan])),
    ]
    s = summarize(cfg, reps).spikes[0]
    assert s.bias == pytest.approx(0.2)
    assert s.rel_pct == pytest.approx(20.0)
    assert s.mse == pytest.approx((0.01 + 0.09) / 2)
    assert s.signed_bias == pytest.approx(-0.1)
    assert (s.used, s.invalid) == (2, 1)
    assert s.cell() == "0.2000(20.0)"


def test_writers(tmp_path):
    cfg = SimConfig.from_ratio((3.0, 2.0), 30, 1)
    reps = run_monte_carlo(cfg, 2, seed=3)
    write_replications_csv(tmp_path / "r.csv", reps)
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 4 and float(rows[0]["alpha_hat"]) == reps[0].alpha_hat[0]
    s = summarize(cfg, reps)
    write_table_csv(tmp_path / "t.csv", [s])
    row = table_row(s)
    assert row[:5] == ["30", "1", str(cfg.n), str(cfg.k), "30"]
    assert row[5].count("(") == 2
