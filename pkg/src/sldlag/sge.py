"""
Structured Gaussian elimination: cheap, sparsity-aware preprocessing that
shrinks a matrix before the iterative solver, logging every step so a
kernel vector of the reduced system lifts exactly to the original one.

Three rules, applied in priority order:
  1. drop empty columns (the lifted coordinate is pinned to 0);
  2. solve weight-1 columns (remove that row and column, keeping the row
     for back-substitution);
  3. for the lightest weight-2 column, combine its two rows to cancel one
     occurrence, which makes rule 2 fire on it immediately.

The run stops when no rule fires, when the projected solver cost
nrows * nnz would increase, when a combination would push a row past the
fill bound, or when the estimated storage drops under the memory budget.
Row combinations densify rows on average; the projected cost still goes
down because iterations scale with the dimension.

SLDT transcript format (little-endian; residues fixed-width as in SLDV):
magic "SLDT"; u32 version=1; u16 ell_bytes; ell (big-endian); u64
original_nrows; u64 original_ncols; u64 reduced_nrows; u64 reduced_ncols;
u64 step count; reduced_ncols x u64 column map; then tagged steps:
tag 0 (drop): u64 col; tag 1 (solve): u64 row, u64 col, pivot residue,
u32 other count, (u64 col, residue) pairs; tag 2 (combine): u64 target
row, u64 source row, multiplier residue.
"""

import heapq
import logging
import struct

from .fileio import FormatError, Reader, atomic_write
from .modring import PrimeModulus
from .spmatrix import SparseMatrix, _ell_header, _read_ell

logger = logging.getLogger(__name__)

DROP_ZERO_COLUMN = 0
SOLVE_SINGLETON_COLUMN = 1
COMBINE_ROWS = 2


class SgeStep:
    """One replayable elimination event (tagged union)."""

    __slots__ = ("kind", "row", "col", "pivot", "others", "target", "source",
                 "multiplier")

    def __init__(self, kind, **kw):
        self.kind = kind
        self.row = kw.get("row")
        self.col = kw.get("col")
        self.pivot = kw.get("pivot")
        self.others = kw.get("others")
        self.target = kw.get("target")
        self.source = kw.get("source")
        self.multiplier = kw.get("multiplier")

    def __eq__(self, other):
        return isinstance(other, SgeStep) and all(
            getattr(self, f) == getattr(other, f) for f in self.__slots__
        )

    def __repr__(self):
        if self.kind == DROP_ZERO_COLUMN:
            return f"Drop(col={self.col})"
        if self.kind == SOLVE_SINGLETON_COLUMN:
            return f"Solve(row={self.row}, col={self.col})"
        return f"Combine({self.target} += {self.multiplier}*{self.source})"


class SgeTranscript:
    """Ordered elimination log plus the reduced-to-original column map."""

    def __init__(self, mod: PrimeModulus, original_nrows: int,
                 original_ncols: int, steps, column_map, reduced_nrows: int):
        self.mod = mod
        self.original_nrows = original_nrows
        self.original_ncols = original_ncols
        self.steps = list(steps)
        self.column_map = list(column_map)
        self.reduced_nrows = reduced_nrows

    @property
    def fixed_zero_cols(self):
        return [s.col for s in self.steps if s.kind == DROP_ZERO_COLUMN]

    def __eq__(self, other):
        return isinstance(other, SgeTranscript) and (
            self.mod == other.mod
            and self.original_nrows == other.original_nrows
            and self.original_ncols == other.original_ncols
            and self.steps == other.steps
            and self.column_map == other.column_map
            and self.reduced_nrows == other.reduced_nrows
        )


def projected_cost(A: SparseMatrix) -> int:
    """nrows * nnz: proportional to total solver field operations."""
    return A.nrows * A.nnz


def estimated_storage_bytes(nnz: int, mod: PrimeModulus) -> int:
    # declared approximation: a column index plus a worst-case coefficient
    return nnz * (8 + mod.byte_width)


def sge_reduce(A: SparseMatrix, max_fill_row_weight: int | None = None,
               memory_budget_bytes: int | None = None):
    """Returns (reduced matrix, transcript).

    Worst case (nothing eliminable) returns a copy of A with an empty
    transcript.  Surviving rows and columns keep their relative order.
    """
    mod = A.mod
    ell = mod.ell
    ncols = A.total_cols
    if max_fill_row_weight is None:
        gamma = A.nnz / A.nrows if A.nrows else 0.0
        max_fill_row_weight = max(8, int(4 * gamma))

    rows = {}
    col_rows = {c: set() for c in range(ncols)}
    for i in range(A.nrows):
        r = {}
        for c, v in A.row_entries(i):
            r[c] = v
            col_rows[c].add(i)
        rows[i] = r

    nnz_live = sum(len(r) for r in rows.values())
    nrows_live = A.nrows
    cost = nrows_live * nnz_live
    alive_cols = set(range(ncols))

    # lazy heaps of candidate columns per weight class
    h0, h1, h2 = [], [], []

    def push(c):
        w = len(col_rows[c])
        if w == 0:
            heapq.heappush(h0, c)
        elif w == 1:
            heapq.heappush(h1, c)
        elif w == 2:
            heapq.heappush(h2, c)

    for c in range(ncols):
        push(c)

    def pop_valid(h, w):
        while h:
            c = heapq.heappop(h)
            if c in alive_cols and len(col_rows[c]) == w:
                return c
        return None

    steps = []

    def budget_reached():
        return (
            memory_budget_bytes is not None
            and estimated_storage_bytes(nnz_live, mod) <= memory_budget_bytes
        )

    def drop_zero(c):
        nonlocal cost
        steps.append(SgeStep(DROP_ZERO_COLUMN, col=c))
        alive_cols.discard(c)
        # zero columns do not change nrows * nnz
        assert nrows_live * nnz_live <= cost
        cost = nrows_live * nnz_live

    def solve_singleton(c):
        nonlocal nnz_live, nrows_live, cost
        (r,) = col_rows[c]
        row = rows[r]
        others = sorted((cc, vv) for cc, vv in row.items() if cc != c)
        steps.append(SgeStep(SOLVE_SINGLETON_COLUMN, row=r, col=c,
                             pivot=row[c], others=others))
        for cc in row:
            col_rows[cc].discard(r)
            if cc in alive_cols and cc != c:
                push(cc)
        nnz_live -= len(row)
        nrows_live -= 1
        del rows[r]
        alive_cols.discard(c)
        assert nrows_live * nnz_live <= cost
        cost = nrows_live * nnz_live

    def lightest_weight2():
        # prune stale heap entries while scanning; "lightest" = smallest
        # combined row weight, ties by lowest column index
        best = None
        valid = set()
        for c in h2:
            if c in alive_cols and len(col_rows[c]) == 2 and c not in valid:
                valid.add(c)
                s = sum(len(rows[r]) for r in col_rows[c])
                key = (s, c)
                if best is None or key < best:
                    best = key
        h2[:] = sorted(valid)
        return None if best is None else best[1]

    while True:
        if budget_reached():
            logger.debug("sge: memory budget reached at nnz=%d", nnz_live)
            break
        c = pop_valid(h0, 0)
        if c is not None:
            drop_zero(c)
            continue
        c = pop_valid(h1, 1)
        if c is not None:
            solve_singleton(c)
            continue
        c = lightest_weight2()
        if c is None:
            break
        r1, r2 = sorted(col_rows[c])
        # source is the lighter row; it survives the combine and is then
        # consumed by the singleton solve
        src, tgt = (r1, r2) if len(rows[r1]) <= len(rows[r2]) else (r2, r1)
        mult = (-rows[tgt][c]) * pow(rows[src][c], -1, ell) % ell
        new_tgt = dict(rows[tgt])
        for cc, vv in rows[src].items():
            s = (new_tgt.get(cc, 0) + mult * vv) % ell
            if s:
                new_tgt[cc] = s
            else:
                new_tgt.pop(cc, None)
        assert c not in new_tgt
        if len(new_tgt) > max_fill_row_weight:
            logger.debug("sge: fill bound hit on column %d", c)
            break
        d_nnz = len(new_tgt) - len(rows[tgt])
        cost_after = (nrows_live - 1) * (nnz_live + d_nnz - len(rows[src]))
        if cost_after > cost:
            logger.debug("sge: projected cost would increase, stopping")
            break
        steps.append(SgeStep(COMBINE_ROWS, target=tgt, source=src,
                             multiplier=mult))
        for cc in rows[tgt]:
            if cc not in new_tgt:
                col_rows[cc].discard(tgt)
                if cc in alive_cols:
                    push(cc)
        for cc in new_tgt:
            if cc not in rows[tgt]:
                col_rows[cc].add(tgt)
                if cc in alive_cols:
                    push(cc)
        nnz_live += d_nnz
        rows[tgt] = new_tgt
        solve_singleton(c)

    column_map = sorted(alive_cols)
    col_remap = {c: j for j, c in enumerate(column_map)}
    alive_rows = sorted(rows)
    reduced = SparseMatrix.from_rows(
        mod, len(alive_rows), len(column_map),
        [[(col_remap[c], v) for c, v in rows[r].items()] for r in alive_rows],
    )
    transcript = SgeTranscript(mod, A.nrows, ncols, steps, column_map,
                               len(alive_rows))
    logger.info(
        "sge: %d x %d (nnz %d) -> %d x %d (nnz %d), %d steps",
        A.nrows, ncols, A.nnz, reduced.nrows, reduced.ncols, reduced.nnz,
        len(steps),
    )
    return reduced, transcript


def replay(t: SgeTranscript, A: SparseMatrix) -> SparseMatrix:
    """Re-apply the transcript to the original matrix (test oracle for the
    transcript invariant)."""
    ell = t.mod.ell
    rows = {i: dict(A.row_entries(i)) for i in range(A.nrows)}
    alive_cols = set(range(A.total_cols))
    for s in t.steps:
        if s.kind == DROP_ZERO_COLUMN:
            alive_cols.discard(s.col)
        elif s.kind == SOLVE_SINGLETON_COLUMN:
            del rows[s.row]
            alive_cols.discard(s.col)
        else:
            tgt = rows[s.target]
            for cc, vv in rows[s.source].items():
                v = (tgt.get(cc, 0) + s.multiplier * vv) % ell
                if v:
                    tgt[cc] = v
                else:
                    tgt.pop(cc, None)
    column_map = sorted(alive_cols)
    remap = {c: j for j, c in enumerate(column_map)}
    alive_rows = sorted(rows)
    return SparseMatrix.from_rows(
        t.mod, len(alive_rows), len(column_map),
        [[(remap[c], v) for c, v in rows[r].items()] for r in alive_rows],
    )


def lift_kernel(t: SgeTranscript, w_reduced) -> list[int]:
    """Back-substitute a reduced-system kernel vector to the original
    coordinates; dropped columns are pinned to 0."""
    if len(w_reduced) != len(t.column_map):
        raise ValueError(
            f"reduced vector length {len(w_reduced)} != {len(t.column_map)}"
        )
    ell = t.mod.ell
    w = [0] * t.original_ncols
    for j, c in enumerate(t.column_map):
        w[c] = t.mod.check(w_reduced[j])
    for s in reversed(t.steps):
        if s.kind == SOLVE_SINGLETON_COLUMN:
            acc = 0
            for cc, vv in s.others:
                acc += vv * w[cc]
            w[s.col] = (-acc) * pow(s.pivot, -1, ell) % ell
    return w


# -- SLDT files ----------------------------------------------------------------


def store_transcript(t: SgeTranscript, path):
    eb = t.mod.byte_width
    chunks = [
        b"SLDT",
        struct.pack("<I", 1),
        _ell_header(t.mod),
        struct.pack("<QQQQQ", t.original_nrows, t.original_ncols,
                    t.reduced_nrows, len(t.column_map), len(t.steps)),
    ]
    for c in t.column_map:
        chunks.append(struct.pack("<Q", c))
    for s in t.steps:
        chunks.append(struct.pack("<B", s.kind))
        if s.kind == DROP_ZERO_COLUMN:
            chunks.append(struct.pack("<Q", s.col))
        elif s.kind == SOLVE_SINGLETON_COLUMN:
            chunks.append(struct.pack("<QQ", s.row, s.col))
            chunks.append(s.pivot.to_bytes(eb, "little"))
            chunks.append(struct.pack("<I", len(s.others)))
            for cc, vv in s.others:
                chunks.append(struct.pack("<Q", cc))
                chunks.append(vv.to_bytes(eb, "little"))
        else:
            chunks.append(struct.pack("<QQ", s.target, s.source))
            chunks.append(s.multiplier.to_bytes(eb, "little"))
    atomic_write(path, b"".join(chunks))


def load_transcript(path) -> SgeTranscript:
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.magic(b"SLDT")
    version = r.u32()
    if version != 1:
        raise FormatError(f"unsupported SLDT version {version}")
    mod = _read_ell(r)
    eb = mod.byte_width
    onr, onc, rnr, ncm, nsteps = struct.unpack("<QQQQQ", r.take(40))
    column_map = [r.u64() for _ in range(ncm)]
    steps = []
    for _ in range(nsteps):
        kind = r.u8()
        if kind == DROP_ZERO_COLUMN:
            steps.append(SgeStep(kind, col=r.u64()))
        elif kind == SOLVE_SINGLETON_COLUMN:
            row, col = r.u64(), r.u64()
            pivot = mod.residue_from_bytes(r.take(eb))
            others = []
            for _ in range(r.u32()):
                cc = r.u64()
                others.append((cc, mod.residue_from_bytes(r.take(eb))))
            steps.append(SgeStep(kind, row=row, col=col, pivot=pivot,
                                 others=others))
        elif kind == COMBINE_ROWS:
            tgt, src = r.u64(), r.u64()
            mult = mod.residue_from_bytes(r.take(eb))
            steps.append(SgeStep(kind, target=tgt, source=src,
                                 multiplier=mult))
        else:
            raise FormatError(f"unknown step tag {kind}")
    r.done()
    return SgeTranscript(mod, onr, onc, steps, column_map, rnr)
