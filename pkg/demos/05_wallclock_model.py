#!/usr/bin/env python3
"""The analytic wall-clock model, fed with the measured per-iteration
costs of the reference record computations."""

from sldlag.perfmodel import REFERENCE_ROWS, CalibrationParams, estimate
from sldlag.solver import BlockingParams

print("matrix size  blocking   per-iter (ms)   krylov    mksol    total   comm%")
for name, compute, comm, pct, days in REFERENCE_ROWS:
    n = 3_602_667 if "3.6M" in name else 3_000_000 if "3.0M" in name else \
        6_000_000 if "6.0M" in name else 7_287_476
    import re
    bn, bm = (int(x) for x in re.search(r"n=(\d+),m=(\d+)", name).groups())
    cal = CalibrationParams(t_iter_compute=compute / 1000, t_iter_comm=comm / 1000)
    est = estimate(n, BlockingParams(bn, bm), cal)
    print(f"{name:34s} {compute:6.0f}+{comm:<6.0f} "
          f"{est.krylov_days:6.1f}d {est.mksol_days:6.1f}d "
          f"{est.total_days:6.1f}d {100 * est.comm_ratio:5.1f}%"
          f"   (reported: {days}d, {pct:.0f}%)")

print()
print("the 3.6M-row binary-field record, (n=4, m=8), 142+27 ms/iteration:")
cal = CalibrationParams(t_iter_compute=0.142, t_iter_comm=0.027)
est = estimate(3_602_667, BlockingParams(4, 8), cal, lingen_seconds=2 * 3600)
print(f"  krylov {est.krylov_iterations} iterations = {est.krylov_days:.1f} days")
print(f"  mksol  {est.mksol_iterations} iterations = {est.mksol_days:.1f} days")
print(f"  + 2h for the generator = "
      f"{(est.total_seconds + est.lingen_seconds) / 86400:.1f} days overall")
