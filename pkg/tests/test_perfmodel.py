"""The wall-clock estimator must reproduce the reference arithmetic."""

import pytest

from sldlag.gridmv import CommLog, IterationLog, PhaseLog
from sldlag.perfmodel import (
    REFERENCE_ROWS,
    CalibrationParams,
    RunEstimate,
    calibrate_from_run,
    comm_ratio,
    estimate,
)
from sldlag.solver import BlockingParams


def test_ffs_record_row():
    cal = CalibrationParams(t_iter_compute=0.142, t_iter_comm=0.027)
    est = estimate(3_602_667, BlockingParams(4, 8), cal)
    assert est.krylov_iterations == 900_667 + 450_334
    assert est.mksol_iterations == 900_667
    assert abs(est.comm_ratio - 0.16) <= 0.01
    assert abs(est.krylov_days - 2.6) / 2.6 <= 0.05
    assert abs(est.mksol_days - 1.8) / 1.8 <= 0.10
    assert abs(est.total_days - 4.5) / 4.5 <= 0.10


def test_nfs_cluster_row():
    cal = CalibrationParams(t_iter_compute=1.7, t_iter_comm=0.4)
    est = estimate(7_287_476, BlockingParams(12, 24), cal)
    assert abs(est.krylov_days - 22.0) / 22.0 <= 0.05
    # the model's Mksol lands at ~14.8 days (the recorded 16 includes
    # overheads the model does not represent)
    assert abs(est.mksol_days - 14.8) <= 0.15


def test_all_reference_comm_ratios():
    for name, compute, comm, reported_pct, _ in REFERENCE_ROWS:
        got = comm_ratio(compute, comm) * 100
        assert abs(got - reported_pct) <= 1.0, name


def test_zero_comm():
    cal = CalibrationParams(t_iter_compute=0.1, t_iter_comm=0.0)
    assert estimate(1000, BlockingParams(2, 4), cal).comm_ratio == 0.0


def test_linearity_in_n():
    cal = CalibrationParams(t_iter_compute=0.01, t_iter_comm=0.002)
    bp = BlockingParams(4, 8)
    small = estimate(8000, bp, cal)
    big = estimate(16000, bp, cal)
    assert big.total_seconds == 2 * small.total_seconds


def test_monotonicity_in_n_blocking():
    cal = CalibrationParams(t_iter_compute=0.01, t_iter_comm=0.0)
    prev = None
    for n in (1, 2, 4, 8, 16):
        est = estimate(100_000, BlockingParams(n, 2 * n), cal)
        if prev is not None:
            assert est.krylov_iterations <= prev
        prev = est.krylov_iterations


def _log(iters, bytes_per_iter, msgs_per_iter=1):
    log = CommLog()
    for i in range(iters):
        e = IterationLog(i, PhaseLog(msgs_per_iter, bytes_per_iter),
                         PhaseLog(0, 0))
        log.entries.append(e)
    return log


def test_calibrate_zero_bytes_latency_only():
    cal = calibrate_from_run(_log(10, 0, msgs_per_iter=3),
                             measured_compute_seconds=1.0,
                             link_latency=5e-6)
    assert cal.t_iter_comm == pytest.approx(15e-6)
    assert cal.t_iter_compute == pytest.approx(0.1)


def test_calibrate_bandwidth_term():
    # 400 bytes per iteration at 100 MB/s, zero latency: 4 microseconds
    cal = calibrate_from_run(_log(5, 400), measured_compute_seconds=0.5,
                             link_bandwidth=100e6)
    assert cal.t_iter_comm == pytest.approx(4e-6)


def test_calibrate_empty_log():
    with pytest.raises(ValueError):
        calibrate_from_run(CommLog(), 1.0)
