#!/usr/bin/env python3
"""The 2D-grid SpMV: balance, split, run iterations on a node grid, and
check the communication log against the analytic model."""

import math

import numpy as np

from sldlag import vecops
from sldlag.balance import GridSpec, balance_permutation, identity_permutation, \
    block_nnz_counts, permuted_padded, split
from sldlag.corpus import profile_ffs
from sldlag.gridmv import Grid, comm_volume_model, run_iterations
from sldlag.modring import PrimeModulus
from sldlag.spmatrix import spmv_sequential

ell = PrimeModulus(2**61 - 1)
A = profile_ffs(n=20_000, seed=3)
from sldlag.corpus import generate
A = generate(A, ell)

g = GridSpec(4, 4)
counts_id = block_nnz_counts(A, identity_permutation(A, g), g)
p = balance_permutation(A, g)
counts_bal = block_nnz_counts(A, p, g)
print(f"imbalance on {g}: identity {counts_id.max() / counts_id.mean():.3f} "
      f"-> balanced {counts_bal.max() / counts_bal.mean():.4f}")

# run a few grid iterations and compare against the sequential product
g2 = GridSpec(2, 2)
p2 = balance_permutation(A, g2)
bs = split(A, p2, g2)
B = permuted_padded(A, p2, g2)
grid = Grid(bs, ell, transport="channel")

rng = np.random.default_rng(0)
u = ell.random_residues(rng, bs.n_padded)
grid.load_vector(vecops.ints_to_planes(u, vecops.digit_count(ell.ell)))
run_iterations(grid, 3)

v = list(u)
for _ in range(3):
    v = spmv_sequential(B, v)
print(f"3 grid iterations == 3 sequential SpMVs: "
      f"{vecops.planes_to_ints(grid.assembled()) == v}")

fine = (bs.n_padded // math.lcm(g2.r, g2.c)) * ell.byte_width
print(f"comm per iteration: logged {grid.comm_log.entries[0].total_bytes} bytes, "
      f"model {comm_volume_model(g2, fine)} bytes")
print(f"messages per iteration: "
      f"{grid.comm_log.entries[0].reduce.messages} reduce + "
      f"{grid.comm_log.entries[0].broadcast.messages} broadcast")
