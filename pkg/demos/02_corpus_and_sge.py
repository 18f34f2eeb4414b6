#!/usr/bin/env python3
"""Generate a DLP-shaped matrix, look at its statistics, then shrink it
with structured Gaussian elimination and lift a kernel vector back."""

import numpy as np

from sldlag.corpus import CorpusProfile, generate_with_witnesses, profile_ffs
from sldlag.modring import PrimeModulus
from sldlag.sge import lift_kernel, projected_cost, sge_reduce
from sldlag.solver import BlockingParams, block_wiedemann
from sldlag.spmatrix import matrix_stats, spmv_sequential

ell = PrimeModulus(2**61 - 1)

# the FFS preset scaled to desk size: ~100 nonzeros/row, 90% of them +-1
prof = profile_ffs(n=5000, seed=7)
A, witnesses = generate_with_witnesses(prof, ell)
s = matrix_stats(A)
print(f"matrix: {s.n} rows, {s.nnz} nnz, gamma={s.avg_row_weight:.1f}, "
      f"pm1={s.pm1_fraction:.3f}, row stddev={s.row_weight_stddev:.2f}")

col_w = np.bincount(A.col_idx, minlength=A.ncols)
print(f"column weights: first 5 {col_w[:5].tolist()} ... last 5 {col_w[-5:].tolist()}")
print(f"planted witness has {sum(1 for x in witnesses[0] if x)} non-zeros, "
      f"A w == 0: {spmv_sequential(A, witnesses[0]) == [0] * A.nrows}")

# a lighter matrix where elimination has something to chew on
B, _ = generate_with_witnesses(
    CorpusProfile(n=3000, gamma=5, density_decay=0.8, seed=8), ell
)
print(f"\nbefore SGE: {B.nrows} rows, projected cost {projected_cost(B)}")
red, transcript = sge_reduce(B)
print(f"after  SGE: {red.nrows} rows, projected cost {projected_cost(red)} "
      f"({len(transcript.steps)} steps, avg row weight "
      f"{B.nnz / B.nrows:.2f} -> {red.nnz / red.nrows:.2f})")

kv, _ = block_wiedemann(red, BlockingParams(2, 4), seed=1)
w = lift_kernel(transcript, kv.w)
print(f"kernel of reduced system lifted: B w == 0 exactly: "
      f"{spmv_sequential(B, w) == [0] * B.nrows}")
