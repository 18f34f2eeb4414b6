"""
Analytic wall-clock estimator for (block) Wiedemann runs.

The whole model is iteration counting: Krylov performs
ceil(N/n) + ceil(N/m) iterations, Mksol ceil(N/n), and each iteration
costs one SpMV plus its communication delay.  The communication ratio is
comm / (comm + compute), the only convention consistent with the measured
per-iteration splits of real runs (e.g. 27 ms of a 142+27 ms iteration is
16%).  The generator phase runs on different resources and enters only as
a caller-supplied constant.

Calibration closes the loop with gridmv: a CommLog plus link constants
(latency, bandwidth) yields the per-iteration communication delay, and a
measured run yields the compute term.
"""

import math
from dataclasses import dataclass

from .gridmv import CommLog
from .solver import BlockingParams

DAY_SECONDS = 86400.0


@dataclass(frozen=True)
class CalibrationParams:
    t_iter_compute: float  # seconds per iteration per subtask
    t_iter_comm: float     # seconds per iteration per subtask
    link_latency: float = 0.0       # seconds per message
    link_bandwidth: float = 0.0     # bytes per second (0 = not modelled)
    nodes_per_subtask: int = 1

    def __post_init__(self):
        if min(self.t_iter_compute, self.t_iter_comm, self.link_latency) < 0:
            raise ValueError("calibration constants must be non-negative")


@dataclass(frozen=True)
class RunEstimate:
    krylov_iterations: int
    mksol_iterations: int
    krylov_seconds: float
    mksol_seconds: float
    total_seconds: float
    comm_ratio: float
    lingen_seconds: float = 0.0

    @property
    def krylov_days(self):
        return self.krylov_seconds / DAY_SECONDS

    @property
    def mksol_days(self):
        return self.mksol_seconds / DAY_SECONDS

    @property
    def total_days(self):
        return self.total_seconds / DAY_SECONDS


def estimate(N: int, bp: BlockingParams, cal: CalibrationParams,
             lingen_seconds: float = 0.0) -> RunEstimate:
    """Phase wall-clocks from iteration counts and per-iteration costs.

    total = Krylov + Mksol; the generator phase is reported alongside but
    not modelled.
    """
    ki = math.ceil(N / bp.n) + math.ceil(N / bp.m)
    mi = math.ceil(N / bp.n)
    per = cal.t_iter_compute + cal.t_iter_comm
    ratio = cal.t_iter_comm / per if per > 0 else 0.0
    return RunEstimate(
        krylov_iterations=ki,
        mksol_iterations=mi,
        krylov_seconds=ki * per,
        mksol_seconds=mi * per,
        total_seconds=(ki + mi) * per,
        comm_ratio=ratio,
        lingen_seconds=lingen_seconds,
    )


def comm_ratio(t_compute: float, t_comm: float) -> float:
    """comm / (comm + compute)."""
    total = t_compute + t_comm
    return t_comm / total if total > 0 else 0.0


def calibrate_from_run(commlog: CommLog, measured_compute_seconds: float,
                       link_latency: float = 0.0,
                       link_bandwidth: float = float("inf"),
                       nodes_per_subtask: int = 1) -> CalibrationParams:
    """Derive per-iteration costs from a gridmv log and link constants."""
    iters = len(commlog.entries)
    if iters == 0:
        raise ValueError("communication log is empty")
    bytes_per_iter = commlog.total_bytes() / iters
    msgs_per_iter = commlog.total_messages() / iters
    t_comm = link_latency * msgs_per_iter + (
        bytes_per_iter / link_bandwidth if link_bandwidth else 0.0
    )
    return CalibrationParams(
        t_iter_compute=measured_compute_seconds / iters,
        t_iter_comm=t_comm,
        link_latency=link_latency,
        link_bandwidth=0.0 if link_bandwidth == float("inf") else link_bandwidth,
        nodes_per_subtask=nodes_per_subtask,
    )


# Measured per-iteration splits of the reference computations:
# (compute ms, comm ms, reported ratio %, reported overall days or None)
REFERENCE_ROWS = [
    ("3.6M FFS (n=4,m=8)", 142.0, 27.0, 16.0, 4.5),
    ("3.6M FFS (n=2,m=4)", 72.0, 41.0, 37.0, 6.0),
    ("3.0M FFS (n=8,m=16)", 228.0, 0.0, 0.0, 2.5),
    ("3.0M FFS (n=4,m=8)", 115.0, 23.0, 17.0, 3.0),
    ("3.0M FFS (n=2,m=4)", 58.0, 35.0, 38.0, 4.1),
    ("6.0M FFS (n=2,m=4)", 123.0, 69.0, 36.0, 16.7),
    ("7.3M NFS 8 GPUs (n=2,m=4)", 420.0, 195.0, 32.0, 65.0),
    ("7.3M NFS 768 cores (n=12,m=24)", 1700.0, 400.0, 19.0, 39.0),
]
