"""
Workload balancing for the 2D grid split.

DLP matrices have wildly uneven column weights (dense on the left,
decaying rightward) but nearly uniform row weights, so a node grid fed
contiguous slices would be badly unbalanced.  The fix: sort columns by
weight and deal them into the column groups in serpentine order, then do
the same for rows.  Each group keeps its members in original-index order,
which makes the permutation deterministic.

The split pads the matrix to a multiple of lcm(r, c).  Every padded
column gets one pinned row holding a single +1, so a kernel vector of the
padded matrix is forced to zero on all padded coordinates; padding can
never inject spurious solutions.  Padding indices map to themselves under
both permutations.

SLDP permutation format: magic "SLDP"; u32 version=1; u64 n_padded;
row_perm then col_perm as u64 arrays (forward maps, original -> new).
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .fileio import FormatError, Reader, atomic_write
from .modring import TAG_FULL, TAG_PLUS_ONE, PrimeModulus
from .spmatrix import SparseMatrix


@dataclass(frozen=True)
class GridSpec:
    r: int
    c: int

    def __post_init__(self):
        if self.r < 1 or self.c < 1:
            raise ValueError("grid dimensions must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        try:
            r, c = text.lower().split("x")
            return cls(int(r), int(c))
        except (ValueError, AttributeError) as e:
            raise ValueError(f"grid spec {text!r} is not RxC") from e

    def __str__(self):
        return f"{self.r}x{self.c}"


def padded_size(n: int, g: GridSpec) -> int:
    lcm = math.lcm(g.r, g.c)
    return ((n + lcm - 1) // lcm) * lcm if n else lcm * 0


class PermutationPair:
    """Forward row/column bijections on [0, n_padded); the padding region
    maps to itself."""

    def __init__(self, row_perm, col_perm, n_original: int):
        self.row_perm = np.asarray(row_perm, dtype=np.int64)
        self.col_perm = np.asarray(col_perm, dtype=np.int64)
        self.n_original = n_original
        n = len(self.row_perm)
        if len(self.col_perm) != n:
            raise ValueError("row and column permutations differ in length")
        for p in (self.row_perm, self.col_perm):
            if sorted(p.tolist()) != list(range(n)):
                raise ValueError("not a permutation")
            if not (p[n_original:] == np.arange(n_original, n)).all():
                raise ValueError("padding region must map to itself")

    @property
    def n_padded(self) -> int:
        return len(self.row_perm)


def _deal_serpentine(weights: np.ndarray, groups: int, n_padded: int):
    """Serpentine deal of weight-sorted items into groups with pad-aware
    capacities; returns the forward permutation."""
    n = len(weights)
    block = n_padded // groups
    caps = []
    for g in range(groups):
        lo, hi = g * block, (g + 1) * block
        pad_here = max(0, hi - max(lo, n))
        caps.append(block - pad_here)
    order = np.lexsort((np.arange(n), -weights))  # weight desc, index asc
    assign = np.empty(n, dtype=np.int64)
    g, direction = 0, 1
    filled = [0] * groups
    for item in order.tolist():
        while filled[g] >= caps[g]:
            g, direction = _next_group(g, direction, groups)
        assign[item] = g
        filled[g] += 1
        g, direction = _next_group(g, direction, groups)
    perm = np.empty(n_padded, dtype=np.int64)
    rank = [0] * groups
    for item in range(n):  # original-index order within each group
        gi = assign[item]
        perm[item] = gi * block + rank[gi]
        rank[gi] += 1
    # padding maps to itself; it occupies exactly the leftover slots
    perm[n:] = np.arange(n, n_padded)
    return perm


def _next_group(g, direction, groups):
    if groups == 1:
        return 0, 1
    g += direction
    if g == groups:
        return groups - 1, -1
    if g < 0:
        return 0, 1
    return g, direction


def _column_weights(A: SparseMatrix) -> np.ndarray:
    w = np.bincount(A.col_idx, minlength=A.total_cols).astype(np.int64)
    for gidx, col in A.dense_cols:
        w[gidx] = sum(1 for v in col if v)
    return w


def _row_weights(A: SparseMatrix) -> np.ndarray:
    w = np.diff(A.row_ptr).astype(np.int64)
    for _, col in A.dense_cols:
        for i, v in enumerate(col):
            if v:
                w[i] += 1
    return w


def balance_permutation(A: SparseMatrix, g: GridSpec) -> PermutationPair:
    """Columns sorted by weight, serpentine-dealt into c groups; rows
    likewise into r groups.  Deterministic."""
    if A.nrows != A.total_cols:
        raise ValueError("balancing expects a square matrix")
    n_pad = padded_size(A.nrows, g)
    col_perm = _deal_serpentine(_column_weights(A), g.c, n_pad)
    row_perm = _deal_serpentine(_row_weights(A), g.r, n_pad)
    return PermutationPair(row_perm, col_perm, A.nrows)


def identity_permutation(A: SparseMatrix, g: GridSpec) -> PermutationPair:
    n_pad = padded_size(A.nrows, g)
    eye = np.arange(n_pad, dtype=np.int64)
    return PermutationPair(eye, eye.copy(), A.nrows)


def _entry_arrays(A: SparseMatrix):
    """All entries (rows, cols, tags, smalls, fulls dict), dense columns
    materialized as full-residue entries."""
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_ptr))
    cols = A.col_idx.copy()
    tags = A.tags.copy()
    smalls = A.small_vals.copy()
    fulls = dict(A.full_vals)
    if A.dense_cols:
        er, ec, ev = [], [], []
        for gidx, col in A.dense_cols:
            for i, v in enumerate(col):
                if v:
                    er.append(i)
                    ec.append(gidx)
                    ev.append(v)
        base = len(rows)
        rows = np.concatenate([rows, np.array(er, dtype=np.int64)])
        cols = np.concatenate([cols, np.array(ec, dtype=np.int64)])
        tags = np.concatenate([tags, np.full(len(er), TAG_FULL, dtype=np.uint8)])
        smalls = np.concatenate([smalls, np.zeros(len(er), dtype=np.int64)])
        for j, v in enumerate(ev):
            fulls[base + j] = v
    return rows, cols, tags, smalls, fulls


class BlockSplit:
    """r x c blocks of the permuted, padded matrix plus the pinned rows."""

    def __init__(self, blocks, grid: GridSpec, n_original: int, n_padded: int,
                 pin_rows):
        self.blocks = blocks
        self.grid = grid
        self.n_original = n_original
        self.n_padded = n_padded
        self.pin_rows = pin_rows
        self.block_rows = n_padded // grid.r
        self.block_cols = n_padded // grid.c

    @property
    def pad_rows(self) -> int:
        return self.n_padded - self.n_original

    pad_cols = pad_rows


def split(A: SparseMatrix, p: PermutationPair, g: GridSpec) -> BlockSplit:
    """Blocks with local indices; one pinned +1 row per padded column."""
    n_pad = padded_size(A.nrows, g)
    if p.n_padded != n_pad:
        raise ValueError("permutation size does not match padded size")
    br, bc = n_pad // g.r, n_pad // g.c
    rows, cols, tags, smalls, fulls = _entry_arrays(A)
    nr = p.row_perm[rows]
    nc = p.col_perm[cols]
    pins = [(i, i) for i in range(A.nrows, n_pad)]
    if pins:
        pr = np.array([x for x, _ in pins], dtype=np.int64)
        nr = np.concatenate([nr, pr])
        nc = np.concatenate([nc, pr])
        tags = np.concatenate(
            [tags, np.full(len(pins), TAG_PLUS_ONE, dtype=np.uint8)]
        )
        smalls = np.concatenate([smalls, np.ones(len(pins), dtype=np.int64)])
    src = np.arange(len(nr), dtype=np.int64)
    bi, bj = nr // br, nc // bc
    lr, lc = nr % br, nc % bc
    order = np.lexsort((lc, lr, bj, bi))
    bi, bj, lr, lc, src = bi[order], bj[order], lr[order], lc[order], src[order]
    tags_s, smalls_s = tags[order], smalls[order]
    full_pos = {int(s): v for s, v in fulls.items()}
    blocks = []
    bounds = np.searchsorted(bi * g.c + bj, np.arange(g.r * g.c + 1))
    for i in range(g.r):
        row_blocks = []
        for j in range(g.c):
            lo, hi = bounds[i * g.c + j], bounds[i * g.c + j + 1]
            f = {}
            for t in np.where(tags_s[lo:hi] == TAG_FULL)[0].tolist():
                f[t] = full_pos[int(src[lo + t])]
            row_ptr = np.zeros(br + 1, dtype=np.int64)
            np.cumsum(np.bincount(lr[lo:hi], minlength=br), out=row_ptr[1:])
            row_blocks.append(SparseMatrix(
                A.mod, br, bc, row_ptr, lc[lo:hi], tags_s[lo:hi],
                smalls_s[lo:hi], f, validate=False,
            ))
        blocks.append(row_blocks)
    return BlockSplit(blocks, g, A.nrows, n_pad, pins)


def permuted_padded(A: SparseMatrix, p: PermutationPair, g: GridSpec) -> SparseMatrix:
    """The assembled matrix the grid computes with: P_r A P_c^T plus the
    pinned padding rows.  Reference object for equivalence tests and the
    sequential solver path."""
    n_pad = padded_size(A.nrows, g)
    rows, cols, tags, smalls, fulls = _entry_arrays(A)
    nr = p.row_perm[rows]
    nc = p.col_perm[cols]
    pad = np.arange(A.nrows, n_pad, dtype=np.int64)
    nr = np.concatenate([nr, pad])
    nc = np.concatenate([nc, pad])
    tags = np.concatenate([tags, np.full(len(pad), TAG_PLUS_ONE, dtype=np.uint8)])
    smalls = np.concatenate([smalls, np.ones(len(pad), dtype=np.int64)])
    src = np.arange(len(nr), dtype=np.int64)
    order = np.lexsort((nc, nr))
    nr, nc, tags, smalls, src = nr[order], nc[order], tags[order], smalls[order], src[order]
    f = {}
    for t in np.where(tags == TAG_FULL)[0].tolist():
        f[t] = fulls[int(src[t])]
    row_ptr = np.zeros(n_pad + 1, dtype=np.int64)
    np.cumsum(np.bincount(nr, minlength=n_pad), out=row_ptr[1:])
    return SparseMatrix(A.mod, n_pad, n_pad, row_ptr, nc, tags, smalls, f,
                        validate=False)


def block_nnz(bs: BlockSplit) -> np.ndarray:
    return np.array(
        [[bs.blocks[i][j].nnz for j in range(bs.grid.c)] for i in range(bs.grid.r)],
        dtype=np.int64,
    )


def block_nnz_counts(A: SparseMatrix, p: PermutationPair, g: GridSpec) -> np.ndarray:
    """Per-block non-zero counts of split(A, p, g) without materializing
    the blocks (pinned padding rows included)."""
    n_pad = padded_size(A.nrows, g)
    br, bc = n_pad // g.r, n_pad // g.c
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_ptr))
    cols = A.col_idx
    nr = p.row_perm[rows]
    nc = p.col_perm[cols]
    counts = np.bincount(
        (nr // br) * g.c + nc // bc, minlength=g.r * g.c
    ).astype(np.int64)
    for gidx, col in A.dense_cols:
        j = p.col_perm[gidx] // bc
        dr = p.row_perm[np.array([i for i, v in enumerate(col) if v],
                                 dtype=np.int64)]
        counts += np.bincount((dr // br) * g.c + j, minlength=g.r * g.c)
    for i in range(A.nrows, n_pad):
        counts[(i // br) * g.c + (i // bc)] += 1
    return counts.reshape(g.r, g.c)


def imbalance(bs: BlockSplit) -> float:
    """max block nnz over mean block nnz (>= 1); error if all empty."""
    counts = block_nnz(bs)
    total = counts.sum()
    if total == 0:
        raise ValueError("imbalance undefined for an all-empty split")
    return float(counts.max() / (total / counts.size))


def store_permutation(p: PermutationPair, path):
    blob = (
        b"SLDP"
        + struct.pack("<I", 1)
        + struct.pack("<QQ", p.n_padded, p.n_original)
        + p.row_perm.astype("<u8").tobytes()
        + p.col_perm.astype("<u8").tobytes()
    )
    atomic_write(path, blob)


def load_permutation(path) -> PermutationPair:
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.magic(b"SLDP")
    version = r.u32()
    if version != 1:
        raise FormatError(f"unsupported SLDP version {version}")
    n_pad, n_orig = struct.unpack("<QQ", r.take(16))
    row_perm = np.frombuffer(r.take(8 * n_pad), dtype="<u8").astype(np.int64)
    col_perm = np.frombuffer(r.take(8 * n_pad), dtype="<u8").astype(np.int64)
    r.done()
    return PermutationPair(row_perm, col_perm, n_orig)
