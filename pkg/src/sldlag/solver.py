"""
Scalar and block Wiedemann kernel solvers.

Three phases over a square matrix B modulo ell:

  Krylov   generate a_i = X^T B^i Y for enough i, by iterating v <- B v
           (never forming powers of B); with n y-columns the work splits
           into n chains that never communicate.
  Lingen   find a linear generator of the (matrix) sequence: classic
           Berlekamp-Massey for n = m = 1, and a quadratic-time iterated
           sigma-basis (Gaussian elimination on the series' leading
           coefficients, one order per step) for blocks.  Desk-scale by
           design; subquadratic generator computation is out of scope.
  Mksol    evaluate w = sum_j F_j(B) y_j with one combined Horner chain,
           then peel trailing powers: while B w != 0, w <- B w, at most
           s steps where X^s is the generators' common factor.

Each chain may run through the distributed grid engine (gridmv) or a
plain sequential multiplier; iterates live as digit planes throughout.
SpMV applications are counted and asserted against the iteration-count
contract.  Failures raise SolverFailure / GeneratorFailure; the driver
retries with fresh random blocks a bounded number of times.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import vecops
from .gridmv import Grid
from .modring import PrimeModulus
from .spmatrix import SparseMatrix, spmv_planes, spmv_sequential

logger = logging.getLogger(__name__)

SAFETY_MARGIN = 32  # extra sequence terms beyond ceil(N/n) + ceil(N/m)
MAX_RESTARTS = 3


class SolverFailure(RuntimeError):
    """The candidate kernel vector degenerated to zero; retry with fresh
    random blocks."""


class GeneratorFailure(RuntimeError):
    """No linear generator within the degree bound; retry."""


@dataclass(frozen=True)
class BlockingParams:
    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < self.n:
            raise ValueError("need m >= n >= 1")

    @classmethod
    def default(cls, n: int) -> "BlockingParams":
        return cls(n, 2 * n)  # m = 2n is the standard generator-cost sweet spot


def krylov_length(N: int, bp: BlockingParams, margin: int = SAFETY_MARGIN) -> int:
    return (N + bp.n - 1) // bp.n + (N + bp.m - 1) // bp.m + margin


@dataclass
class BlockSequence:
    """Terms a_i as m x n integer matrices, stored per y-column."""

    m: int
    n: int
    columns: list  # columns[j][i] = list of m ints (column j of a_i)
    spmvs_per_column: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return min(len(c) for c in self.columns) if self.columns else 0

    def term(self, i: int):
        return [[self.columns[j][i][t] for j in range(self.n)]
                for t in range(self.m)]

    def scalar(self) -> list:
        assert self.m == 1 and self.n == 1
        return [v[0] for v in self.columns[0]]


@dataclass
class Generators:
    """n polynomials over Z/ellZ, coefficient lists low-degree-first."""

    polys: list

    @property
    def degree(self) -> int:
        return max(_poly_degree(p) for p in self.polys)

    def nonzero(self) -> bool:
        return any(any(c for c in p) for p in self.polys)


@dataclass
class KernelVector:
    w: list
    verified: bool
    horner_spmvs: int = 0
    tail_spmvs: int = 0


def _poly_degree(p) -> int:
    for i in range(len(p) - 1, -1, -1):
        if p[i]:
            return i
    return -1


def _poly_trim(p) -> list:
    return p[: _poly_degree(p) + 1]


# -- multipliers ----------------------------------------------------------------


class SequentialMultiplier:
    """v <- A v on digit planes with an SpMV counter."""

    def __init__(self, A: SparseMatrix):
        if A.nrows != A.total_cols:
            raise ValueError("solver needs a square matrix")
        self.A = A
        self.size = A.nrows
        self.mod = A.mod
        self.count = 0

    def apply(self, planes):
        self.count += 1
        return spmv_planes(self.A, planes)


class GridMultiplier:
    """Runs each product as one grid iteration; counts grid SpMVs."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.size = grid.bs.n_padded
        self.mod = grid.mod

    @property
    def count(self):
        return self.grid.spmv_count

    def apply(self, planes):
        return self.grid.apply_once(planes)

    @property
    def comm_log(self):
        return self.grid.comm_log


# -- x-side projections ----------------------------------------------------------


class UnitRows:
    """x-block of standard unit vectors: projections read coordinates."""

    def __init__(self, rows):
        self.rows = list(rows)

    def project(self, planes) -> list:
        sub = planes[self.rows]
        return vecops.planes_to_ints(sub)


class DenseRows:
    """Random dense x-block: projections are full dot products."""

    def __init__(self, vectors, mod: PrimeModulus):
        self.vectors = [list(v) for v in vectors]
        self.mod = mod

    def project(self, planes) -> list:
        ell = self.mod.ell
        v = vecops.planes_to_ints(planes)
        return [sum(a * b for a, b in zip(x, v)) % ell for x in self.vectors]


def _as_planes(vec, mod: PrimeModulus):
    return vecops.ints_to_planes(vec, vecops.digit_count(mod.ell))


# -- Krylov -----------------------------------------------------------------------


def krylov_column(mul, xblock, y_planes, count, start_terms=None,
                  checkpoint=None, col_index=0):
    """One chain: terms[i] = X^T (B^i y) for i < count, exactly count SpMVs.

    The final advance primes the iterate for checkpoint/restart.  With
    start_terms (resume) the chain continues from the stored iterate.
    """
    terms = list(start_terms) if start_terms else []
    v = y_planes
    spmvs = 0
    for i in range(len(terms), count):
        terms.append(xblock.project(v))
        v = mul.apply(v)
        spmvs += 1
        if checkpoint is not None:
            checkpoint.on_step(col_index, terms, v)
    if checkpoint is not None and spmvs:
        checkpoint.flush(col_index, terms, v)
    return terms, v, spmvs


def krylov_block(A, X, Y, count, muls=None, checkpoint=None,
                 contexts=None) -> BlockSequence:
    """a_i = X^T A^i Y, the n column chains computed independently.

    X is a UnitRows/DenseRows projection block; Y a list of n vectors
    (ints).  muls optionally supplies one multiplier per column (grid
    instances); default is a sequential multiplier on A.
    """
    n = len(Y)
    if muls is None:
        muls = [SequentialMultiplier(A) for _ in range(n)]
    mod = muls[0].mod
    if contexts is None:
        contexts = int(os.environ.get("SLDLAG_CONTEXTS", "1"))

    def run(j):
        start = checkpoint.load_column(j) if checkpoint is not None else None
        if start is not None:
            terms0, v_planes = start
            if len(terms0) >= count:
                return terms0[:count], 0
        else:
            terms0, v_planes = [], _as_planes(Y[j], mod)
        terms, _, spmvs = krylov_column(
            muls[j], X, v_planes, count, start_terms=terms0,
            checkpoint=checkpoint, col_index=j,
        )
        return terms, spmvs

    if contexts > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=contexts) as pool:
            results = list(pool.map(run, range(n)))
    else:
        results = [run(j) for j in range(n)]
    m = len(results[0][0][0]) if results and results[0][0] else 0
    seq = BlockSequence(m=m, n=n, columns=[r[0] for r in results],
                        spmvs_per_column=[r[1] for r in results])
    return seq


def krylov_scalar(A, x, y, count=None, mul=None) -> list:
    """a_i = x^T (A^i y) for i in [0, count); count defaults to 2N."""
    if count is None:
        count = 2 * (A.nrows if A is not None else mul.size)
    if mul is None:
        mul = SequentialMultiplier(A)
    xb = DenseRows([x], mul.mod)
    terms, _, _ = krylov_column(mul, xb, _as_planes(y, mul.mod), count)
    return [t[0] for t in terms]


# -- Berlekamp-Massey -------------------------------------------------------------


def berlekamp_massey(seq, mod: PrimeModulus) -> list:
    """Monic minimal polynomial F (low-first) with
    sum_i F[i] * seq[k+i] = 0 for every window position k.

    The all-zero sequence returns F = [1] (degree 0) and logs a warning.
    """
    ell = mod.ell
    C = [1]  # connection polynomial, constant term 1
    B = [1]
    L, gap, b = 0, 1, 1
    for pos, s in enumerate(seq):
        d = 0
        for i in range(min(L, len(C) - 1) + 1):
            d += C[i] * seq[pos - i]
        d %= ell
        if d == 0:
            gap += 1
            continue
        coef = d * pow(b, -1, ell) % ell
        shifted = [0] * gap + [coef * x % ell for x in B]
        if 2 * L <= pos:
            T = C[:]
            C = [
                (a - c) % ell
                for a, c in zip(C + [0] * (len(shifted) - len(C)),
                                shifted + [0] * (len(C) - len(shifted)))
            ]
            L = pos + 1 - L
            B, b, gap = T, d, 1
        else:
            C = [
                (a - c) % ell
                for a, c in zip(C + [0] * (len(shifted) - len(C)),
                                shifted + [0] * (len(C) - len(shifted)))
            ]
            gap += 1
    if L == 0:
        logger.warning("berlekamp_massey: all-zero sequence, returning F = 1")
        return [1]
    C = (C + [0] * (L + 1 - len(C)))[: L + 1]
    return [C[L - i] for i in range(L + 1)]  # reverse: monic, degree L


def annihilates(F, seq_terms, mod: PrimeModulus, sample=64, k_start=0) -> bool:
    """Check sum_i sum_j F_j[i] * a_{k+i}[:, j] = 0 on the testable window
    k in [k_start, count - degree).

    seq_terms: for scalar use a list of ints; for blocks a BlockSequence.
    """
    ell = mod.ell
    if isinstance(seq_terms, BlockSequence):
        polys = F
        d = max(_poly_degree(p) for p in polys)
        count = seq_terms.count
        m, n = seq_terms.m, seq_terms.n
        ks = range(k_start, count - d)
        if len(ks) > sample:
            ks = sorted(set(
                np.linspace(k_start, count - d - 1, sample).astype(int).tolist()
            ))
        for k in ks:
            for t in range(m):
                acc = 0
                for j in range(n):
                    pj = polys[j]
                    col = seq_terms.columns[j]
                    for i in range(d + 1):
                        if i < len(pj) and pj[i]:
                            acc += pj[i] * col[k + i][t]
                if acc % ell:
                    return False
        return True
    F = list(F)
    d = _poly_degree(F)
    for k in range(len(seq_terms) - d):
        acc = 0
        for i in range(d + 1):
            acc += F[i] * seq_terms[k + i]
        if acc % ell:
            return False
    return True


# -- block linear generator (iterated sigma-basis) --------------------------------


def _poly_sub_scaled(dst, src, k, ell):
    """dst -= k * src (low-first coefficient lists)."""
    if len(dst) < len(src):
        dst.extend([0] * (len(src) - len(dst)))
    for i, c in enumerate(src):
        if c:
            dst[i] = (dst[i] - k * c) % ell
    return dst


def _poly_add(dst, src, ell):
    if len(dst) < len(src):
        dst.extend([0] * (len(src) - len(dst)))
    for i, c in enumerate(src):
        if c:
            dst[i] = (dst[i] + c) % ell
    return dst


def block_lingen(seq: BlockSequence, bp: BlockingParams, N: int,
                 mod: PrimeModulus, rng=None) -> Generators:
    """Linear generator of the m x n sequence: n polynomials such that the
    window annihilation identity holds and each degree stays within
    ceil(N/n).

    n = m = 1 reduces exactly to berlekamp_massey.  Otherwise the
    generator is computed for the once-shifted sequence (a_{i+1}): a
    minimal relation of the shifted chains B y_j is exactly what makes the
    Mksol combination sum_j F_j(B) y_j land in the kernel of B instead of
    collapsing to zero.  Construction: seed the candidate set with random
    constants against an X^s0 identity block, then per order of the
    series, sort candidates by nominal degree and eliminate the leading
    coefficients (Gaussian steps on the constant terms); surviving
    low-degree columns converge to generators.
    """
    ell = mod.ell
    m, n = bp.m, bp.n
    if m == 1 and n == 1:
        F = berlekamp_massey(seq.scalar(), mod)
        return Generators([F])
    if rng is None:
        rng = np.random.default_rng(0)
    count = seq.count - 1  # terms a_1 .. a_{count}: the shifted sequence
    s0 = (m + n - 1) // n
    width = m + n

    def term(j, pos):
        return seq.columns[j][pos + 1]

    # E starts as (S * F0) div X^s0 where F0 = [random deg<s0 block | X^s0 I]
    # f0[t][j] = coefficients of F0[j, t] for t < m
    f0 = [[mod.random_residues(rng, s0) for _ in range(n)] for _ in range(m)]
    E = [[None] * width for _ in range(m)]
    for t in range(m):
        for r in range(m):
            coeffs = []
            for pos in range(s0, count):
                acc = 0
                for j in range(n):
                    p = f0[t][j]
                    for i, c in enumerate(p):
                        if c and pos - i >= 0:
                            acc += c * term(j, pos - i)[r]
                coeffs.append(acc % ell)
            E[r][t] = coeffs
    for u in range(n):
        for r in range(m):
            E[r][m + u] = [term(u, pos)[r] for pos in range(count)]

    P = [[[1] if i == j else [0] for j in range(width)] for i in range(width)]
    delta = [s0] * width
    order = list(range(width))

    steps = count - s0 - 1
    for _ in range(steps):
        order.sort(key=lambda c: (delta[c], c))
        used = set()
        for r in range(m):
            j0 = None
            for c in order:
                if c not in used and E[r][c] and E[r][c][0] % ell:
                    j0 = c
                    break
            if j0 is None:
                continue
            used.add(j0)
            inv = pow(E[r][j0][0], -1, ell)
            start = order.index(j0)
            for c in order[start + 1:]:
                if c in used or not E[r][c] or not E[r][c][0] % ell:
                    continue
                k = E[r][c][0] * inv % ell
                for rr in range(m):
                    _poly_sub_scaled(E[rr][c], E[rr][j0], k, ell)
                for rr in range(width):
                    _poly_sub_scaled(P[rr][c], P[rr][j0], k, ell)
        for c in range(width):
            if c in used:
                delta[c] += 1
                for rr in range(width):
                    P[rr][c] = [0] + P[rr][c]  # multiply by X
            else:
                for rr in range(m):
                    if E[rr][c]:
                        assert E[rr][c][0] % ell == 0
                        E[rr][c] = E[rr][c][1:]  # divide by X

    # candidate generators: G[:, c] = (F0 P)[:, c], nominal degree delta[c]
    bound = (N + n - 1) // n
    for c in sorted(range(width), key=lambda c: (delta[c], c)):
        gcol = []
        for j in range(n):
            acc = [0]
            for t in range(m):
                _poly_add(acc, _poly_mul(f0[t][j], P[t][c], ell), ell)
            # the X^s0 identity block of F0 contributes X^s0 * P[m+j, c]
            _poly_add(acc, [0] * s0 + P[m + j][c], ell)
            gcol.append(acc)
        d = max(_poly_degree(p) for p in gcol)
        if d < 0:
            continue
        F = [[p[d - i] if 0 <= d - i < len(p) else 0 for i in range(d + 1)]
             for p in gcol]
        F = [[c % ell for c in p] for p in F]
        if d > bound:
            logger.debug("lingen: candidate degree %d beyond bound %d", d, bound)
            continue
        if annihilates(F, seq, mod, k_start=1):
            logger.info("lingen: generator of degree %d (delta %d)", d, delta[c])
            return Generators(F)
    raise GeneratorFailure("no annihilating generator within the degree bound")


def _poly_mul(a, b, ell) -> list:
    if not a or not b:
        return [0]
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                if y:
                    out[i + j] = (out[i + j] + x * y) % ell
    return out


# -- Mksol ------------------------------------------------------------------------


def _mksol_core(mul, Y_planes, polys, mod: PrimeModulus) -> KernelVector:
    """w = sum_j G_j(B) y_j by one combined Horner chain, then the tail."""
    ell = mod.ell
    red = vecops.ModReducer(ell)
    trimmed = [_poly_trim(list(p)) for p in polys]
    if not any(_poly_degree(p) >= 0 for p in trimmed):
        raise GeneratorFailure("all-zero generators")
    val = min(
        next((i for i, c in enumerate(p) if c), len(p)) for p in trimmed
    )
    G = [p[val:] if len(p) > val else [0] for p in trimmed]
    dmax = max(_poly_degree(p) for p in G)
    width = vecops.digit_count(ell)
    size = Y_planes[0].shape[0]

    def combo(i):
        acc = np.zeros((size, width), dtype=np.uint64)
        for j, p in enumerate(G):
            if i <= _poly_degree(p) and p[i]:
                term = vecops.planes_scalar_mul_mod(Y_planes[j], p[i], red)
                acc = vecops.planes_add_mod(acc, term, red)
        return acc

    w = combo(dmax)
    horner = 0
    for i in range(dmax - 1, -1, -1):
        w = mul.apply(w)
        horner += 1
        ci = combo(i)
        w = vecops.planes_add_mod(w, ci, red)

    tail = 0
    nxt = mul.apply(w)
    while np.any(nxt) and tail < val:
        w = nxt
        tail += 1
        nxt = mul.apply(w)
    verified = not np.any(nxt) and bool(np.any(w))
    if not np.any(w):
        raise SolverFailure("kernel candidate degenerated to zero")
    kv = KernelVector(vecops.planes_to_ints(w), verified,
                      horner_spmvs=horner, tail_spmvs=tail)
    if not verified:
        raise SolverFailure("candidate is not in the kernel after the tail")
    return kv


def mksol_scalar(A, y, F, mul=None) -> KernelVector:
    if mul is None:
        mul = SequentialMultiplier(A)
    return _mksol_core(mul, [_as_planes(y, mul.mod)], [F], mul.mod)


def mksol_block(A, Y, G: Generators, mul=None) -> KernelVector:
    if mul is None:
        mul = SequentialMultiplier(A)
    planes = [_as_planes(y, mul.mod) for y in Y]
    return _mksol_core(mul, planes, G.polys, mul.mod)


def verify_kernel(A: SparseMatrix, w) -> bool:
    """True iff A w = 0 exactly and w != 0."""
    if not any(w):
        return False
    return not any(spmv_sequential(A, w))


# -- driver -----------------------------------------------------------------------


def draw_blocks(mod: PrimeModulus, size: int, bp: BlockingParams, rng,
                x_mode="unit", forced_zero=()):
    """Random Y block and x-projection block; forced_zero coordinates are
    excluded from unit rows and zeroed in Y (padding coordinates)."""
    allowed = [i for i in range(size) if i not in set(forced_zero)]
    Y = []
    for _ in range(bp.n):
        y = mod.random_residues(rng, size)
        for z in forced_zero:
            y[z] = 0
        Y.append(y)
    if x_mode == "unit":
        rows = rng.choice(len(allowed), size=bp.m, replace=False)
        X = UnitRows(sorted(allowed[int(r)] for r in rows))
    elif x_mode == "dense":
        X = DenseRows([mod.random_residues(rng, size) for _ in range(bp.m)], mod)
    else:
        raise ValueError(f"unknown x_mode {x_mode!r}")
    return X, Y


def block_wiedemann(A, bp: BlockingParams, seed: int, make_mul=None,
                    margin: int = SAFETY_MARGIN, x_mode="unit",
                    forced_zero=(), checkpoint=None, max_restarts=MAX_RESTARTS,
                    contexts=None):
    """Full solve on a square matrix: returns (KernelVector, stats dict).

    make_mul(j) builds the multiplier for column chain j (defaults to
    sequential SpmV on A); mksol reuses chain 0's multiplier.  Retries with
    fresh blocks, switching to dense x, after degenerate outcomes.
    """
    mod = A.mod if A is not None else make_mul(0).mod
    size = A.nrows if A is not None else make_mul(0).size
    count = krylov_length(size, bp, margin)
    first_failure = None
    attempt0 = checkpoint.attempt if checkpoint is not None else 0
    for attempt in range(attempt0, max_restarts + 1):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        mode = x_mode if attempt == 0 else "dense"
        X, Y = draw_blocks(mod, size, bp, rng, mode, forced_zero)
        if checkpoint is not None:
            X, Y = checkpoint.begin_attempt(attempt, X, Y, bp, count, mode)
        muls = [make_mul(j) for j in range(bp.n)] if make_mul else None
        try:
            seq = krylov_block(A, X, Y, count, muls=muls,
                               checkpoint=checkpoint, contexts=contexts)
            gens = block_lingen(seq, bp, size, mod, rng)
            mul0 = muls[0] if muls else None
            kv = mksol_block(A, Y, gens, mul=mul0)
            stats = {
                "attempt": attempt,
                "krylov_count": count,
                "krylov_spmvs_per_column": seq.spmvs_per_column,
                "generator_degree": gens.degree,
                "horner_spmvs": kv.horner_spmvs,
                "tail_spmvs": kv.tail_spmvs,
            }
            return kv, stats
        except (SolverFailure, GeneratorFailure) as e:
            logger.warning("solver attempt %d failed: %s", attempt, e)
            first_failure = first_failure or e
            if checkpoint is not None:
                checkpoint.discard_attempt()
            continue
    raise SolverFailure(
        f"no kernel vector after {max_restarts + 1} attempts "
        f"(first failure: {first_failure})"
    )
