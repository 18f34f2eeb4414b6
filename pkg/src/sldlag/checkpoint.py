"""
Krylov checkpointing: sequence terms and the current iterate of every
column chain are flushed periodically (default every 2^14 steps) so a
killed run resumes bit-identically.

Directory layout:
  meta.txt          key=value: attempt, n, m, count, size, ell (hex),
                    x_mode, x_rows (unit mode)
  x/col_<t>.sldv    dense-x columns (dense mode only)
  y/col_<j>.sldv    the random y block of the current attempt
  seq/col_<j>.sldq  terms so far: magic "SLDQ"; u32 version=1;
                    u16 ell_bytes; ell (big-endian); u32 m; u32 n_or_1=1;
                    u64 count; count x m fixed-width residues
  iter/col_<j>.sldv current iterate B^count y_j

All writes are atomic (temp file + rename); a kill can never leave a
half-written checkpoint.
"""

import os
import struct
import threading
from pathlib import Path

from .fileio import FormatError, Reader, atomic_write
from .modring import PrimeModulus
from .spmatrix import _ell_header, _read_ell, load_vector, store_vector

CHECKPOINT_EVERY = 2**14


class HaltRequested(RuntimeError):
    """Raised by the test/CLI halt hook after flushing a checkpoint."""


def store_terms(path, terms, m: int, mod: PrimeModulus):
    blob = [
        b"SLDQ",
        struct.pack("<I", 1),
        _ell_header(mod),
        struct.pack("<II", m, 1),
        struct.pack("<Q", len(terms)),
    ]
    for t in terms:
        blob.append(mod.vector_to_bytes(t))
    atomic_write(path, b"".join(blob))


def load_terms(path):
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.magic(b"SLDQ")
    version = r.u32()
    if version != 1:
        raise FormatError(f"unsupported SLDQ version {version}")
    mod = _read_ell(r)
    m, ncols = struct.unpack("<II", r.take(8))
    count = r.u64()
    terms = [
        mod.vector_from_bytes(r.take(m * mod.byte_width), m)
        for _ in range(count)
    ]
    r.done()
    return terms, m, mod


class CheckpointManager:
    """Glue between the solver driver and the on-disk checkpoint."""

    def __init__(self, directory, mod: PrimeModulus, every: int = CHECKPOINT_EVERY,
                 halt_after: int | None = None):
        self.dir = Path(directory)
        self.mod = mod
        self.every = max(1, int(every))
        self.halt_after = halt_after
        self._session_steps = 0
        self._since_flush = {}
        self._lock = threading.Lock()
        self.m = None
        for sub in ("seq", "iter", "x", "y"):
            (self.dir / sub).mkdir(parents=True, exist_ok=True)

    # -- meta -------------------------------------------------------------------

    def _meta_path(self):
        return self.dir / "meta.txt"

    def read_meta(self):
        path = self._meta_path()
        if not path.exists():
            return None
        out = {}
        for line in path.read_text().splitlines():
            line = line.strip()
            if line and "=" in line:
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
        return out

    @property
    def attempt(self) -> int:
        meta = self.read_meta()
        return int(meta["attempt"]) if meta else 0

    def begin_attempt(self, attempt, X, Y, bp, count, x_mode):
        """Either persist the freshly drawn blocks or reload the stored
        ones when resuming the same attempt."""
        from . import solver  # late import: solver imports this module

        self.m = bp.m
        meta = self.read_meta()
        size = len(Y[0])
        if meta is not None and int(meta["attempt"]) == attempt:
            for key, val in (("n", bp.n), ("m", bp.m), ("count", count),
                             ("size", size)):
                if int(meta[key]) != val:
                    raise FormatError(
                        f"checkpoint mismatch: {key}={meta[key]}, expected {val}"
                    )
            if meta["ell"] != hex(self.mod.ell):
                raise FormatError("checkpoint mismatch: different modulus")
            Y = [load_vector(self.dir / "y" / f"col_{j}.sldv")[0]
                 for j in range(bp.n)]
            if meta["x_mode"] == "unit":
                rows = [int(t) for t in meta["x_rows"].split(",")]
                X = solver.UnitRows(rows)
            else:
                vecs = [load_vector(self.dir / "x" / f"col_{t}.sldv")[0]
                        for t in range(bp.m)]
                X = solver.DenseRows(vecs, self.mod)
            return X, Y
        # fresh attempt: wipe stale per-column data, persist blocks
        for sub in ("seq", "iter", "x", "y"):
            d = self.dir / sub
            for f in d.iterdir():
                f.unlink()
        lines = [
            f"attempt={attempt}",
            f"n={bp.n}",
            f"m={bp.m}",
            f"count={count}",
            f"size={size}",
            f"ell={hex(self.mod.ell)}",
            f"x_mode={x_mode}",
        ]
        if x_mode == "unit":
            lines.append("x_rows=" + ",".join(str(r) for r in X.rows))
        else:
            for t, vec in enumerate(X.vectors):
                store_vector(vec, self.mod, self.dir / "x" / f"col_{t}.sldv")
        for j, y in enumerate(Y):
            store_vector(y, self.mod, self.dir / "y" / f"col_{j}.sldv")
        atomic_write(self._meta_path(), ("\n".join(lines) + "\n").encode())
        return X, Y

    def discard_attempt(self):
        meta = self.read_meta() or {"attempt": "0"}
        nxt = int(meta["attempt"]) + 1
        lines = [f"attempt={nxt}"]
        atomic_write(self._meta_path(), ("\n".join(lines) + "\n").encode())

    # -- per-column state ----------------------------------------------------------

    def load_column(self, j):
        seq_path = self.dir / "seq" / f"col_{j}.sldq"
        it_path = self.dir / "iter" / f"col_{j}.sldv"
        if not seq_path.exists() or not it_path.exists():
            return None
        terms, m, mod = load_terms(seq_path)
        if mod != self.mod:
            raise FormatError("checkpoint modulus mismatch")
        vec, _ = load_vector(it_path)
        from . import vecops
        planes = vecops.ints_to_planes(vec, vecops.digit_count(self.mod.ell))
        return terms, planes

    def flush(self, j, terms, v_planes):
        from . import vecops
        with self._lock:
            store_terms(self.dir / "seq" / f"col_{j}.sldq", terms,
                        self.m or len(terms[0]), self.mod)
            store_vector(vecops.planes_to_ints(v_planes), self.mod,
                         self.dir / "iter" / f"col_{j}.sldv")
            self._since_flush[j] = 0

    def on_step(self, j, terms, v_planes):
        with self._lock:
            self._session_steps += 1
            self._since_flush[j] = self._since_flush.get(j, 0) + 1
            need_flush = self._since_flush[j] >= self.every
            halt = (
                self.halt_after is not None
                and self._session_steps >= self.halt_after
            )
        if need_flush or halt:
            self.flush(j, terms, v_planes)
        if halt:
            raise HaltRequested(
                f"halted after {self._session_steps} steps (checkpoint saved)"
            )
