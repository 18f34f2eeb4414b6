"""
Sparse matrices over Z/ellZ in a CSR-derived layout with coefficient
classes, plus an optional block of dense columns.

Coefficients are stored as the smallest class that represents them:
+1 / -1 tags (the dominant case in DLP matrices, ~90%), signed
machine-word "small" values, or full residues.  Dense columns (an NFS
artifact) occupy the highest column indices; sparse column indices never
reference them, which keeps the CSR hot loop branch-free.

The sequential SpMV accumulates each row in RNS (modring/vecops); the
batched kernel is bit-identical to the per-row reference.

File formats (little-endian unless stated):

SLDM matrix: magic "SLDM"; u32 version=1; u64 nrows; u64 ncols (sparse);
u16 ell_bytes; ell as ell_bytes big-endian bytes; u32 dense_count;
dense_count x u64 global column indices; the dense columns, each nrows
fixed-width residues; then per row: u32 entry count, entries as
(u64 column delta from the previous column index, starting from 0;
u8 tag 0:+1, 1:-1, 2:i32 payload, 3:residue payload; payload).

SLDV vector: magic "SLDV"; u32 version=1; u16 ell_bytes; ell bytes
(big-endian); u64 length; fixed-width residues.
"""

import struct

import numpy as np

from . import vecops
from .fileio import FormatError, Reader, atomic_write
from .modring import (
    TAG_FULL,
    TAG_MINUS_ONE,
    TAG_PLUS_ONE,
    TAG_SMALL,
    PrimeModulus,
    RnsContext,
    from_rns,
    rns_dot_accumulate,
    to_rns,
)

C_MAX_DEFAULT = 2**31 - 1  # small class must fit the i32 file payload


def classify(value: int, mod: PrimeModulus):
    """Smallest coefficient class for a canonical non-zero value.

    Returns (tag, small) where small is the signed word payload for
    TAG_SMALL and the +-1 sign convenience value otherwise.
    """
    ell = mod.ell
    v = value % ell
    if v == 0:
        raise ValueError("zero coefficient cannot be stored")
    if v == 1:
        return TAG_PLUS_ONE, 1
    if v == ell - 1:
        return TAG_MINUS_ONE, -1
    neg = v - ell
    c = v if v <= -neg else neg
    if abs(c) <= C_MAX_DEFAULT:
        return TAG_SMALL, c
    return TAG_FULL, 0


class SparseMatrix:
    """CSR rows with per-entry class tags plus optional dense columns.

    Global column indexing is [0, ncols) for sparse columns followed by
    the dense columns; vectors passed to spmv have length
    ncols + len(dense_cols).
    """

    def __init__(self, mod: PrimeModulus, nrows: int, ncols: int,
                 row_ptr, col_idx, tags, small_vals, full_vals: dict,
                 dense_cols=None, validate: bool = True):
        self.mod = mod
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.tags = np.asarray(tags, dtype=np.uint8)
        self.small_vals = np.asarray(small_vals, dtype=np.int64)
        self.full_vals = {int(k): int(v) for k, v in full_vals.items()}
        self.dense_cols = [(int(g), list(col)) for g, col in (dense_cols or [])]
        self._kernel = None
        if validate:
            self._validate()

    def _validate(self):
        if self.row_ptr.shape != (self.nrows + 1,):
            raise ValueError("row_ptr length must be nrows + 1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise ValueError("row_ptr endpoints inconsistent with entry count")
        if (np.diff(self.row_ptr) < 0).any():
            raise ValueError("row_ptr must be monotone")
        if len(self.col_idx) != len(self.tags) or len(self.col_idx) != len(self.small_vals):
            raise ValueError("parallel entry arrays disagree in length")
        if len(self.col_idx) and (
            self.col_idx.min() < 0 or self.col_idx.max() >= self.ncols
        ):
            raise ValueError("sparse column index out of range")
        if len(self.col_idx) > 1:
            nondecr = np.diff(self.col_idx) <= 0
            boundary = np.zeros(len(self.col_idx) - 1, dtype=bool)
            inner = self.row_ptr[1:-1]
            inner = inner[(inner > 0) & (inner < len(self.col_idx))]
            boundary[inner - 1] = True
            if (nondecr & ~boundary).any():
                raise ValueError("column indices not strictly increasing within a row")
        for g, (gidx, col) in enumerate(self.dense_cols):
            if gidx != self.ncols + g:
                raise ValueError("dense columns must occupy the top indices in order")
            if len(col) != self.nrows:
                raise ValueError("dense column length mismatch")
            for v in col:
                self.mod.check(v)
        for pos, v in self.full_vals.items():
            self.mod.check(v)
            if v == 0:
                raise ValueError("explicit zero coefficient")
        if (self.tags > 3).any():
            raise ValueError("unknown coefficient tag")

    # -- construction --------------------------------------------------------

    @classmethod
    def from_rows(cls, mod: PrimeModulus, nrows: int, ncols: int, rows,
                  dense_cols=None):
        """Build from per-row (col, value) pairs; values canonicalized,
        zeros dropped, each coefficient stored in its smallest class."""
        row_ptr = [0]
        cols, tags, smalls = [], [], []
        fulls = {}
        for r in rows:
            ent = sorted((int(c), v) for c, v in r)
            prev = -1
            for c, v in ent:
                if c == prev:
                    raise ValueError("duplicate column in row")
                prev = c
                v = int(v) % mod.ell
                if v == 0:
                    continue
                tag, small = classify(v, mod)
                if tag == TAG_FULL:
                    fulls[len(cols)] = v
                cols.append(c)
                tags.append(tag)
                smalls.append(small)
            row_ptr.append(len(cols))
        return cls(mod, nrows, ncols, row_ptr, cols, tags, smalls, fulls,
                   dense_cols)

    def entry_value(self, pos: int) -> int:
        """Canonical residue of the sparse entry at flat position pos."""
        t = self.tags[pos]
        if t == TAG_PLUS_ONE:
            return 1
        if t == TAG_MINUS_ONE:
            return self.mod.ell - 1
        if t == TAG_SMALL:
            return int(self.small_vals[pos]) % self.mod.ell
        return self.full_vals[pos]

    def row_entries(self, i: int):
        """[(global col, canonical value)] for row i, dense part included."""
        s, e = int(self.row_ptr[i]), int(self.row_ptr[i + 1])
        out = [(int(self.col_idx[p]), self.entry_value(p)) for p in range(s, e)]
        for gidx, col in self.dense_cols:
            if col[i]:
                out.append((gidx, col[i]))
        return out

    @property
    def total_cols(self) -> int:
        return self.ncols + len(self.dense_cols)

    @property
    def nnz(self) -> int:
        """Non-zero count, dense columns included."""
        dense_nnz = sum(1 for _, col in self.dense_cols for v in col if v)
        return len(self.col_idx) + dense_nnz

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.mod == other.mod
            and self.nrows == other.nrows
            and self.ncols == other.ncols
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.tags, other.tags)
            and np.array_equal(self.small_vals, other.small_vals)
            and self.full_vals == other.full_vals
            and self.dense_cols == other.dense_cols
        )

    # -- products -------------------------------------------------------------

    def kernel(self) -> vecops.SpmvKernel:
        """Batched SpMV kernel (built lazily, cached)."""
        if self._kernel is None:
            t = self.tags
            rows = np.repeat(np.arange(self.nrows, dtype=np.int64),
                             np.diff(self.row_ptr))
            plus = t == TAG_PLUS_ONE
            minus = t == TAG_MINUS_ONE
            small = t == TAG_SMALL
            full = t == TAG_FULL
            full_rows = rows[full].tolist()
            full_cols = self.col_idx[full].tolist()
            full_vals = [self.full_vals[p] for p in np.where(full)[0].tolist()]
            for gidx, col in self.dense_cols:
                for i, v in enumerate(col):
                    if v:
                        full_rows.append(i)
                        full_cols.append(gidx)
                        full_vals.append(v)
            self._kernel = vecops.SpmvKernel(
                self.mod, self.nrows, vecops.digit_count(self.mod.ell),
                rows[plus], self.col_idx[plus], rows[minus], self.col_idx[minus],
                rows[small], self.col_idx[small], self.small_vals[small],
                full_rows, full_cols, full_vals,
            )
        return self._kernel


def spmv_sequential(A: SparseMatrix, u) -> list[int]:
    """v = A u over Z/ellZ, exact; dense-column contributions included."""
    if len(u) != A.total_cols:
        raise ValueError(f"vector length {len(u)} != {A.total_cols} columns")
    planes = vecops.ints_to_planes(u, vecops.digit_count(A.mod.ell))
    out = A.kernel().apply(planes)
    return vecops.planes_to_ints(out)


def spmv_planes(A: SparseMatrix, planes: np.ndarray) -> np.ndarray:
    """Digit-plane variant of spmv_sequential (same exact results)."""
    if planes.shape[0] != A.total_cols:
        raise ValueError("plane count mismatch")
    return A.kernel().apply(planes)


def spmv_reference(A: SparseMatrix, u) -> list[int]:
    """Per-row scalar reference: one rns_dot_accumulate per row.

    Slow path used by tests as the ground truth the batched kernel must
    match bit-exactly.
    """
    if len(u) != A.total_cols:
        raise ValueError(f"vector length {len(u)} != {A.total_cols} columns")
    mod = A.mod
    gamma = max(
        (int(x) for x in np.diff(A.row_ptr)), default=0
    ) + len(A.dense_cols)
    small_abs = np.abs(A.small_vals[A.tags == TAG_SMALL])
    cmax = max(1, int(small_abs.max()) if len(small_abs) else 1)
    ctx = RnsContext(mod, max(1, gamma), cmax)
    u_rns = [to_rns(mod.check(x), ctx) for x in u]
    out = []
    for i in range(A.nrows):
        coeffs, inputs = [], []
        s, e = int(A.row_ptr[i]), int(A.row_ptr[i + 1])
        for p in range(s, e):
            t = int(A.tags[p])
            if t == TAG_SMALL:
                coeffs.append((t, int(A.small_vals[p])))
            elif t == TAG_FULL:
                coeffs.append((t, A.full_vals[p]))
            else:
                coeffs.append((t, None))
            inputs.append(u_rns[int(A.col_idx[p])])
        for gidx, col in A.dense_cols:
            if col[i]:
                coeffs.append((TAG_FULL, col[i]))
                inputs.append(u_rns[gidx])
        out.append(from_rns(rns_dot_accumulate(coeffs, inputs, ctx), ctx))
    return out


class MatrixStats:
    """Size, fill, and coefficient-class statistics of a matrix."""

    def __init__(self, n, nnz, avg_row_weight, row_weight_stddev,
                 column_weight_histogram, pm1_fraction):
        self.n = n
        self.nnz = nnz
        self.avg_row_weight = avg_row_weight
        self.row_weight_stddev = row_weight_stddev
        self.column_weight_histogram = column_weight_histogram
        self.pm1_fraction = pm1_fraction

    def __repr__(self):
        return (
            f"MatrixStats(n={self.n}, nnz={self.nnz}, "
            f"gamma={self.avg_row_weight:.2f}, "
            f"row_stddev={self.row_weight_stddev:.2f}, "
            f"pm1={self.pm1_fraction:.3f})"
        )


def matrix_stats(A: SparseMatrix) -> MatrixStats:
    """Exact counts; +-1 fraction is by value, dense entries included."""
    row_w = np.diff(A.row_ptr).astype(np.int64)
    col_w = (
        np.bincount(A.col_idx, minlength=A.total_cols)
        if len(A.col_idx)
        else np.zeros(A.total_cols, dtype=np.int64)
    )
    pm1 = int((A.tags == TAG_PLUS_ONE).sum() + (A.tags == TAG_MINUS_ONE).sum())
    ell = A.mod.ell
    for g, (gidx, col) in enumerate(A.dense_cols):
        colw = 0
        for i, v in enumerate(col):
            if v:
                colw += 1
                row_w[i] += 1
                if v == 1 or v == ell - 1:
                    pm1 += 1
        col_w[gidx] = colw
    nnz = int(row_w.sum())
    if A.nrows == 0:
        return MatrixStats(0, 0, 0.0, 0.0, [], 0.0)
    hist_counts = np.bincount(col_w)
    hist = [(int(w), int(c)) for w, c in enumerate(hist_counts) if c]
    return MatrixStats(
        n=A.nrows,
        nnz=nnz,
        avg_row_weight=nnz / A.nrows,
        row_weight_stddev=float(np.std(row_w)),
        column_weight_histogram=hist,
        pm1_fraction=pm1 / nnz if nnz else 0.0,
    )


# -- SLDM / SLDV files ---------------------------------------------------------


def _ell_header(mod: PrimeModulus) -> bytes:
    eb = mod.byte_width
    return struct.pack("<H", eb) + mod.ell.to_bytes(eb, "big")


def _read_ell(r: Reader) -> PrimeModulus:
    eb = r.u16()
    ell = int.from_bytes(r.take(eb), "big")
    try:
        return PrimeModulus(ell)
    except ValueError as e:
        raise FormatError(str(e)) from e


def store_matrix(A: SparseMatrix, path):
    chunks = [
        b"SLDM",
        struct.pack("<I", 1),
        struct.pack("<QQ", A.nrows, A.ncols),
        _ell_header(A.mod),
        struct.pack("<I", len(A.dense_cols)),
    ]
    for gidx, _ in A.dense_cols:
        chunks.append(struct.pack("<Q", gidx))
    for _, col in A.dense_cols:
        chunks.append(A.mod.vector_to_bytes(col))
    eb = A.mod.byte_width
    for i in range(A.nrows):
        s, e = int(A.row_ptr[i]), int(A.row_ptr[i + 1])
        chunks.append(struct.pack("<I", e - s))
        prev = 0
        for p in range(s, e):
            c = int(A.col_idx[p])
            t = int(A.tags[p])
            chunks.append(struct.pack("<QB", c - prev, t))
            prev = c
            if t == TAG_SMALL:
                chunks.append(struct.pack("<i", int(A.small_vals[p])))
            elif t == TAG_FULL:
                chunks.append(A.full_vals[p].to_bytes(eb, "little"))
    atomic_write(path, b"".join(chunks))


def load_matrix(path) -> SparseMatrix:
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.magic(b"SLDM")
    version = r.u32()
    if version != 1:
        raise FormatError(f"unsupported SLDM version {version}")
    nrows, ncols = struct.unpack("<QQ", r.take(16))
    mod = _read_ell(r)
    dense_count = r.u32()
    dense_idx = [r.u64() for _ in range(dense_count)]
    eb = mod.byte_width
    dense_cols = []
    for gidx in dense_idx:
        col = mod.vector_from_bytes(r.take(nrows * eb), nrows)
        dense_cols.append((gidx, col))
    row_ptr = [0]
    cols, tags, smalls = [], [], []
    fulls = {}
    for _ in range(nrows):
        count = r.u32()
        prev = 0
        for _ in range(count):
            delta = r.u64()
            tag = r.u8()
            c = prev + delta
            prev = c
            if tag == TAG_SMALL:
                v = r.i32() % mod.ell
            elif tag == TAG_FULL:
                v = int.from_bytes(r.take(eb), "little")
            elif tag == TAG_PLUS_ONE:
                v = 1
            elif tag == TAG_MINUS_ONE:
                v = mod.ell - 1
            else:
                raise FormatError(f"unknown entry tag {tag}")
            if v % mod.ell == 0:
                raise ValueError("zero coefficient in file")
            # re-classify: smallest class wins regardless of the stored tag
            tag2, small = classify(v, mod)
            if tag2 == TAG_FULL:
                fulls[len(cols)] = v
            cols.append(c)
            tags.append(tag2)
            smalls.append(small)
        row_ptr.append(len(cols))
    r.done()
    return SparseMatrix(mod, nrows, ncols, row_ptr, cols, tags, smalls, fulls,
                        dense_cols)


def store_vector(vec, mod: PrimeModulus, path):
    blob = (
        b"SLDV"
        + struct.pack("<I", 1)
        + _ell_header(mod)
        + struct.pack("<Q", len(vec))
        + mod.vector_to_bytes(vec)
    )
    atomic_write(path, blob)


def load_vector(path):
    """Returns (vector, modulus)."""
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.magic(b"SLDV")
    version = r.u32()
    if version != 1:
        raise FormatError(f"unsupported SLDV version {version}")
    mod = _read_ell(r)
    n = r.u64()
    vec = mod.vector_from_bytes(r.take(n * mod.byte_width), n)
    r.done()
    return vec, mod
