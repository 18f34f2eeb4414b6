"""
The distributed SpMV engine.

Nodes form an r x c grid; node (i, j) holds block A_ij and the j-th input
fragment u_j.  One iteration is three phases:

  1. every node computes its partial product A_ij u_j;
  2. the nodes of row i send their partials to that row's collector
     (node (i, i mod c), the diagonal on square grids), which sums them in
     source-column order into the output piece v_i;
  3. collectors broadcast: each node (k, j) receives the slices of v that
     make up its next input fragment u'_j.

On square grids v_i and u'_i coincide and phase 3 is the textbook
"diagonal node broadcasts down its column".  On rectangular grids the
row pieces v_i and column pieces u'_j differ in size, so collectors send
the interval overlaps; the accounting in comm_volume_model reproduces the
engine's exact byte counts for any grid shape.

Workers exchange data only through Message objects moved by a Transport:
`channel` keeps payloads as arrays in process; `socket` pushes every
message through a loopback byte socket using the wire encoding
(u8 kind; u16 src_i, src_j, dst_i, dst_j; u64 iteration; u64 payload
residue count; fixed-width residues).  The engine itself is a sequential
single-context scheduler, the deterministic reference mode: runs are
bit-identical, including the communication log.
"""

import math
import socket as socketlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import vecops
from .balance import BlockSplit, GridSpec
from .modring import PrimeModulus

KIND_PARTIAL_SUM = 0
KIND_FRAGMENT = 1

_HEADER = struct.Struct("<BHHHHQQ")


class GridProtocolError(RuntimeError):
    """Message arrived with the wrong iteration tag (or is malformed)."""


class GridTimeoutError(RuntimeError):
    """An expected message never arrived."""


@dataclass
class Message:
    kind: int
    src: tuple
    dst: tuple
    iteration: int
    payload: np.ndarray  # digit planes, one row per residue

    def encode(self, mod: PrimeModulus) -> bytes:
        body = vecops.planes_to_bytes(self.payload, mod.byte_width)
        head = _HEADER.pack(self.kind, self.src[0], self.src[1],
                            self.dst[0], self.dst[1], self.iteration,
                            self.payload.shape[0])
        return head + body


def decode_message(blob: bytes, mod: PrimeModulus) -> Message:
    kind, si, sj, di, dj, it, count = _HEADER.unpack(blob[: _HEADER.size])
    body = blob[_HEADER.size :]
    planes = vecops.bytes_to_planes(body, count, mod.byte_width,
                                    vecops.digit_count(mod.ell))
    return Message(kind, (si, sj), (di, dj), it, planes)


class ChannelTransport:
    """In-process mailboxes; payload arrays move by reference."""

    def __init__(self):
        self.mailboxes = {}

    def send(self, msg: Message, mod: PrimeModulus):
        self.mailboxes.setdefault(msg.dst, []).append(msg)

    def drain(self, dst):
        return self.mailboxes.pop(dst, [])


class SocketTransport:
    """Every message crosses a loopback byte socket, exercising the wire
    encoding end to end; delivery order is preserved."""

    def __init__(self):
        self.mailboxes = {}
        self._a, self._b = socketlib.socketpair()

    def send(self, msg: Message, mod: PrimeModulus):
        blob = msg.encode(mod)
        frame = struct.pack("<Q", len(blob)) + blob
        self._a.sendall(frame)
        # single-context scheduler: pull the frame back out immediately so
        # kernel socket buffers never fill up
        (size,) = struct.unpack("<Q", self._recv_exact(8))
        out = decode_message(self._recv_exact(size), mod)
        self.mailboxes.setdefault(out.dst, []).append(out)

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            got = self._b.recv(n)
            if not got:
                raise GridTimeoutError("socket closed mid-message")
            chunks.append(got)
            n -= len(got)
        return b"".join(chunks)

    def drain(self, dst):
        return self.mailboxes.pop(dst, [])

    def close(self):
        self._a.close()
        self._b.close()


class DroppingTransport:
    """Test harness wrapper: drops messages matching a predicate, so
    receivers hit their timeout path."""

    def __init__(self, inner, should_drop):
        self.inner = inner
        self.should_drop = should_drop

    def send(self, msg, mod):
        if not self.should_drop(msg):
            self.inner.send(msg, mod)

    def drain(self, dst):
        return self.inner.drain(dst)


def make_transport(name: str):
    if name == "channel":
        return ChannelTransport()
    if name == "socket":
        return SocketTransport()
    raise ValueError(f"unknown transport {name!r}")


@dataclass
class PhaseLog:
    messages: int = 0
    bytes: int = 0


@dataclass
class IterationLog:
    iteration: int
    reduce: PhaseLog = field(default_factory=PhaseLog)
    broadcast: PhaseLog = field(default_factory=PhaseLog)

    @property
    def total_bytes(self):
        return self.reduce.bytes + self.broadcast.bytes


class CommLog:
    def __init__(self):
        self.entries = []

    def total_bytes(self):
        return sum(e.total_bytes for e in self.entries)

    def total_messages(self):
        return sum(e.reduce.messages + e.broadcast.messages for e in self.entries)


class WorkerState:
    """Per-node state: the block, the input fragment, the scratch partial,
    and (on collectors) the reduced row piece."""

    def __init__(self, coords, block):
        self.coords = coords
        self.block = block
        self.in_fragment = None   # (block_cols, P) digit planes
        self.out_fragment = None  # next iteration's u_j, valid post-iteration
        self.scratch = None       # partial product, (block_rows, P)
        self.row_piece = None     # collectors only
        self.iteration = 0


class Grid:
    """Sequential reference scheduler for the three-phase iteration."""

    def __init__(self, bs: BlockSplit, mod: PrimeModulus, transport="channel"):
        self.bs = bs
        self.g = bs.grid
        self.mod = mod
        self.transport = (
            make_transport(transport) if isinstance(transport, str) else transport
        )
        self.workers = {
            (i, j): WorkerState((i, j), bs.blocks[i][j])
            for i in range(self.g.r)
            for j in range(self.g.c)
        }
        self.comm_log = CommLog()
        self.spmv_count = 0
        self.iteration = 0
        self.width = vecops.digit_count(mod.ell)
        self._red = vecops.ModReducer(mod.ell)

    def collector_col(self, i: int) -> int:
        return i % self.g.c

    def _row_range(self, i):
        br = self.bs.block_rows
        return i * br, (i + 1) * br

    def _col_range(self, j):
        bc = self.bs.block_cols
        return j * bc, (j + 1) * bc

    # -- vector movement ------------------------------------------------------

    def load_vector(self, planes: np.ndarray):
        if planes.shape[0] != self.bs.n_padded:
            raise ValueError("vector length != padded size")
        for (i, j), w in self.workers.items():
            lo, hi = self._col_range(j)
            w.in_fragment = planes[lo:hi]
            w.out_fragment = None

    def assembled(self) -> np.ndarray:
        """Concatenation of the column fragments held by row-0 workers."""
        pieces = [self.workers[(0, j)].in_fragment for j in range(self.g.c)]
        return np.vstack(pieces)

    # -- the iteration ---------------------------------------------------------

    def iterate(self, count: int = 1, tap=None):
        for _ in range(count):
            self._one_iteration()
            if tap is not None:
                view = self.assembled()
                view.setflags(write=False)
                tap(self.iteration - 1, view)
        return self.comm_log

    def _one_iteration(self):
        g = self.g
        log = IterationLog(self.iteration)
        # phase 1: local partial SpMV
        for w in self.workers.values():
            w.scratch = w.block.kernel().apply(w.in_fragment)
        self.spmv_count += 1
        # phase 2: reduce partials to the row collector
        for i in range(g.r):
            ci = self.collector_col(i)
            for j in range(g.c):
                if j == ci:
                    continue
                src = self.workers[(i, j)]
                msg = Message(KIND_PARTIAL_SUM, (i, j), (i, ci),
                              self.iteration, src.scratch)
                self.transport.send(msg, self.mod)
                log.reduce.messages += 1
                log.reduce.bytes += src.scratch.shape[0] * self.mod.byte_width
        for i in range(g.r):
            ci = self.collector_col(i)
            collector = self.workers[(i, ci)]
            inbox = self.transport.drain((i, ci))
            by_src = {}
            for m in inbox:
                if m.iteration != self.iteration:
                    raise GridProtocolError(
                        f"node {(i, ci)} got iteration {m.iteration}, "
                        f"expected {self.iteration}"
                    )
                if m.kind != KIND_PARTIAL_SUM:
                    raise GridProtocolError("unexpected message kind in reduce")
                by_src[m.src[1]] = m.payload
            expect = [j for j in range(g.c) if j != ci]
            missing = [j for j in expect if j not in by_src]
            if missing:
                raise GridTimeoutError(
                    f"collector {(i, ci)} timed out waiting for partials "
                    f"from columns {missing}"
                )
            acc = collector.scratch
            for j in expect:  # fixed order: by source column index
                acc = vecops.planes_add_mod(acc, by_src[j], self._red)
            collector.row_piece = acc
        # phase 3: broadcast slices of v to the workers that need them
        for i in range(g.r):
            ci = self.collector_col(i)
            rlo, rhi = self._row_range(i)
            piece = self.workers[(i, ci)].row_piece
            for j in range(g.c):
                clo, chi = self._col_range(j)
                lo, hi = max(rlo, clo), min(rhi, chi)
                if lo >= hi:
                    continue
                payload = piece[lo - rlo : hi - rlo]
                for k in range(g.r):
                    if (k, j) == (i, ci):
                        continue  # the collector already holds its slice
                    msg = Message(KIND_FRAGMENT, (i, ci), (k, j),
                                  self.iteration, payload)
                    self.transport.send(msg, self.mod)
                    log.broadcast.messages += 1
                    log.broadcast.bytes += payload.shape[0] * self.mod.byte_width
        for (k, j), w in self.workers.items():
            clo, chi = self._col_range(j)
            frag = np.zeros((chi - clo, self.width), dtype=np.uint64)
            covered = np.zeros(chi - clo, dtype=bool)
            if w.row_piece is not None:
                i = w.coords[0]
                rlo, rhi = self._row_range(i)
                lo, hi = max(rlo, clo), min(rhi, chi)
                if lo < hi:
                    frag[lo - clo : hi - clo] = w.row_piece[lo - rlo : hi - rlo]
                    covered[lo - clo : hi - clo] = True
            for m in self.transport.drain((k, j)):
                if m.iteration != self.iteration:
                    raise GridProtocolError(
                        f"node {(k, j)} got iteration {m.iteration}, "
                        f"expected {self.iteration}"
                    )
                if m.kind != KIND_FRAGMENT:
                    raise GridProtocolError("unexpected message kind in broadcast")
                si = m.src[0]
                rlo, rhi = self._row_range(si)
                lo, hi = max(rlo, clo), min(rhi, chi)
                frag[lo - clo : hi - clo] = m.payload
                covered[lo - clo : hi - clo] = True
            if not covered.all():
                raise GridTimeoutError(
                    f"node {(k, j)} timed out: fragment coverage incomplete"
                )
            w.out_fragment = frag
            w.row_piece = None
        for w in self.workers.values():
            w.in_fragment = w.out_fragment
            w.iteration += 1
        self.comm_log.entries.append(log)
        self.iteration += 1

    def apply_once(self, planes: np.ndarray, tap=None) -> np.ndarray:
        """One-shot v = B u through the grid (loads, iterates once, reads)."""
        self.load_vector(planes)
        self.iterate(1, tap=tap)
        return self.assembled()


def grid_iteration(grid: Grid, tap=None) -> CommLog:
    grid.iterate(1, tap=tap)
    return grid.comm_log


def run_iterations(grid: Grid, k: int, tap=None) -> CommLog:
    if k < 0:
        raise ValueError("iteration count must be >= 0")
    grid.iterate(k, tap=tap)
    return grid.comm_log


def comm_volume_model(g: GridSpec, fragment_bytes: int) -> int:
    """Predicted bytes per iteration; fragment_bytes is the byte size of
    one fragment at the lcm(r, c) granularity (= the ordinary fragment on
    square grids).  Matches the engine's CommLog exactly."""
    L = math.lcm(g.r, g.c)
    fine_r = L // g.r  # fine fragments per row piece
    fine_c = L // g.c  # fine fragments per column piece
    reduce_bytes = g.r * (g.c - 1) * fine_r * fragment_bytes
    bcast = 0
    for i in range(g.r):
        ci = i % g.c
        rlo, rhi = i * fine_r, (i + 1) * fine_r
        for j in range(g.c):
            clo, chi = j * fine_c, (j + 1) * fine_c
            overlap = min(rhi, chi) - max(rlo, clo)
            if overlap <= 0:
                continue
            receivers = g.r - (1 if ci == j else 0)
            bcast += overlap * receivers * fragment_bytes
    return reduce_bytes + bcast
