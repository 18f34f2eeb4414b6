"""
Vectorized exact arithmetic on batches of residues.

A batch of N canonical residues is held as an (N, P) uint64 array of
16-bit digits, little-endian digit order ("digit planes").  All hot-loop
arithmetic runs as numpy array passes whose intermediate values provably
fit in 64-bit integers; floating point appears only to guess quotients,
which are then fixed by exact integer correction steps.  Every public
routine is bit-exact against the scalar reference in modring.

The core batched pipeline per SpMV is:
  digit planes -> RNS limbs (one integer matmul against a power table),
  limb-wise accumulation of a whole sparse row block,
  limbs -> canonical planes (CRT folded modulo ell with a small exact
  quotient recovery), no per-element Python in between.
"""

import math

import numpy as np

DIGIT_BITS = 16
DIGIT_MASK = (1 << DIGIT_BITS) - 1


def digit_count(x: int) -> int:
    return max(1, (int(x).bit_length() + DIGIT_BITS - 1) // DIGIT_BITS)


def int_to_digits(x: int, width: int) -> np.ndarray:
    buf = int(x).to_bytes(2 * width, "little")
    return np.frombuffer(buf, dtype="<u2").astype(np.uint64)


def ints_to_planes(values, width: int) -> np.ndarray:
    """Pack canonical residues into an (N, width) uint64 digit matrix."""
    nb = 2 * width
    buf = b"".join(int(v).to_bytes(nb, "little") for v in values)
    arr = np.frombuffer(buf, dtype="<u2").reshape(len(values), width)
    return arr.astype(np.uint64)


def planes_to_ints(planes: np.ndarray) -> list[int]:
    arr16 = planes.astype("<u2")
    nb = 2 * planes.shape[1]
    buf = arr16.tobytes()
    return [int.from_bytes(buf[i * nb : (i + 1) * nb], "little") for i in range(planes.shape[0])]


def planes_to_bytes(planes: np.ndarray, byte_width: int) -> bytes:
    """Little-endian fixed-width serialization of a whole batch."""
    arr8 = planes.astype("<u2").view(np.uint8).reshape(planes.shape[0], -1)
    return arr8[:, :byte_width].tobytes()


def bytes_to_planes(data: bytes, count: int, byte_width: int, width: int) -> np.ndarray:
    arr8 = np.frombuffer(data, dtype=np.uint8).reshape(count, byte_width)
    padded = np.zeros((count, 2 * width), dtype=np.uint8)
    padded[:, :byte_width] = arr8
    return padded.view("<u2").astype(np.uint64)


def _float_scaled(x: int, base_bits: int) -> float:
    """float(x / 2**base_bits) without overflow for huge x."""
    s = max(0, int(x).bit_length() - 53)
    return math.ldexp(float(x >> s), s - base_bits)


def carry_norm(planes: np.ndarray) -> np.ndarray:
    """Propagate carries so every digit lands in [0, 2^16).

    Accepts int64 planes of either sign; the caller must leave headroom
    columns so the final carry-out fits.  For a non-negative value the top
    column ends >= 0; a negative value leaves a negative top column.

    All columns move their carries simultaneously per pass; magnitudes
    shrink geometrically, so non-negative data settles in ~4 passes
    (negative values sign-extend and may ripple once per column).
    """
    out = planes.astype(np.int64, copy=True)
    cols = out.shape[1]
    low = out[:, : cols - 1]
    for _ in range(16 * cols + 8):
        carry = low >> DIGIT_BITS
        if not carry.any():
            return out
        low -= carry << DIGIT_BITS
        out[:, 1:] += carry
    raise AssertionError("carry propagation did not converge")


class ModReducer:
    """Exact reduction of digit planes modulo a fixed integer.

    Strategy: split off the sign exactly, fold high digits down with a
    precomputed 2^(16p) mod m table (an integer matmul), which compresses
    any input to a value below ~2^23 * m, then recover the tiny remaining
    quotient with a float estimate whose error is provably below one unit
    on same-sign compact digits, followed by exact +-m corrections.
    """

    def __init__(self, modulus: int):
        self.modulus = int(modulus)
        self.width = digit_count(self.modulus)
        self.digits = int_to_digits(self.modulus, self.width).astype(np.int64)
        self._base = DIGIT_BITS * max(0, self.width - 4)
        self._mod_scaled = _float_scaled(self.modulus, self._base)
        self._fold_tables: dict[int, np.ndarray] = {}
        self._pow_cache: dict[int, np.ndarray] = {}

    def _pow_scaled(self, cols: int) -> np.ndarray:
        pw = self._pow_cache.get(cols)
        if pw is None:
            exps = DIGIT_BITS * np.arange(cols) - self._base
            pw = np.ldexp(1.0, exps.astype(np.int64))
            self._pow_cache[cols] = pw
        return pw

    def _smallq_loop(self, work: np.ndarray, q_total=None) -> np.ndarray:
        """Shared core: non-negative carry-normalized planes with a
        moderate quotient; float-biased subtractions, exact corrections."""
        pw = self._pow_scaled(work.shape[1])
        md = self.digits
        w = self.width
        for _ in range(64):
            # one-sided estimate: the bias keeps the subtraction from ever
            # overshooting below zero, so progress is monotone
            approx = work.astype(np.float64) @ pw
            q = np.floor(approx / self._mod_scaled * (1.0 - 2.0**-8))
            np.clip(q, 0, 2**50, out=q)
            qi = q.astype(np.int64)
            if not qi.any():
                break
            work[:, :w] -= qi[:, None] * md[None, :]
            if q_total is not None:
                q_total += qi
            work = carry_norm(work)
            assert (work[:, -1] >= 0).all()
        else:
            raise AssertionError("modular reduction did not converge")
        for _ in range(8):
            trial = work.copy()
            trial[:, :w] -= md[None, :]
            trial = carry_norm(trial)
            ge = trial[:, -1] >= 0
            if not ge.any():
                break
            work[ge] = trial[ge]
            if q_total is not None:
                q_total[ge] += 1
        else:
            raise AssertionError("subtract correction did not converge")
        assert not work[:, w:].any()
        return work

    def reduce_compact(self, planes: np.ndarray) -> np.ndarray:
        """value mod m for NON-NEGATIVE int64 planes whose quotient fits
        well under 2^50 (the hot path; no fold, no sign handling)."""
        pad = np.zeros((planes.shape[0], 3), dtype=np.int64)
        work = carry_norm(np.hstack([planes, pad]))
        assert (work[:, -1] >= 0).all()
        return self._smallq_loop(work)[:, : self.width].astype(np.uint64)

    def _fold_table(self, cols: int) -> np.ndarray:
        tbl = self._fold_tables.get(cols)
        if tbl is None:
            tbl = np.vstack(
                [
                    int_to_digits(pow(2, DIGIT_BITS * p, self.modulus), self.width)
                    for p in range(cols)
                ]
            ).astype(np.int64)
            self._fold_tables[cols] = tbl
        return tbl

    def _sign_split(self, planes: np.ndarray):
        """carry-normalize with headroom; return (|value| digits, neg mask)."""
        work = planes.astype(np.int64, copy=True)
        pad = np.zeros((work.shape[0], 4), dtype=np.int64)
        work = carry_norm(np.hstack([work, pad]))
        assert np.isin(work[:, -1], (-1, 0)).all()
        neg = work[:, -1] < 0
        if neg.any():
            work[neg] = -work[neg]
            work = carry_norm(work)
            assert np.isin(work[:, -1], (-1, 0)).all() and not (work[:, -1] < 0).any()
        return work, neg

    def _reduce_nonneg(self, work: np.ndarray) -> np.ndarray:
        """Exact remainder for non-negative digit planes of any magnitude."""
        # fold: value' = sum(d_p * (2^16p mod m)) == value (mod m),
        # with value' < cols * 2^16 * m
        folded = work @ self._fold_table(work.shape[1])
        folded = np.hstack([folded, np.zeros((folded.shape[0], 3), dtype=np.int64)])
        folded = carry_norm(folded)
        pw = self._pow_scaled(folded.shape[1])
        md = self.digits
        w = self.width
        for _ in range(64):
            # same-sign digits: float dot has ~2^-48 relative error, and the
            # quotient here is < 2^24, so each estimate is off by at most 1
            # deliberately one-sided estimate: the bias keeps subtraction
            # from ever overshooting below zero, so progress is monotone
            approx = folded.astype(np.float64) @ pw
            q = np.floor(approx / self._mod_scaled * (1.0 - 2.0**-8))
            np.clip(q, 0, 2**40, out=q)
            qi = q.astype(np.int64)
            if not qi.any():
                break
            folded[:, :w] -= qi[:, None] * md[None, :]
            folded = carry_norm(folded)
            assert (folded[:, -1] >= 0).all()
        else:
            raise AssertionError("modular reduction did not converge")
        for _ in range(8):
            trial = folded.copy()
            trial[:, :w] -= md[None, :]
            trial = carry_norm(trial)
            ge = trial[:, -1] >= 0
            if not ge.any():
                break
            folded[ge] = trial[ge]
        else:
            raise AssertionError("subtract correction did not converge")
        assert not folded[:, w:].any()
        return folded[:, :w]

    def reduce(self, planes: np.ndarray) -> np.ndarray:
        """Exact value mod m, elementwise, for signed input of any size."""
        work, neg = self._sign_split(planes)
        red = self._reduce_nonneg(work)
        if neg.any():
            # r -> (m - r) mod m for the negated rows
            flipped = -red[neg]
            flipped[:, : self.width] += self.digits[None, :]
            flipped = carry_norm(np.hstack(
                [flipped, np.zeros((flipped.shape[0], 1), dtype=np.int64)]
            ))
            # value m stays m, not 0: one conditional subtract
            trial = flipped.copy()
            trial[:, : self.width] -= self.digits[None, :]
            trial = carry_norm(trial)
            ge = trial[:, -1] >= 0
            flipped[ge] = trial[ge]
            red[neg] = flipped[:, : self.width]
        return red.astype(np.uint64)

    def quotient(self, planes: np.ndarray):
        """(value div m, value mod m) for NON-NEGATIVE planes with small
        quotient (< 2^45): float estimates on same-sign digits, corrected
        exactly."""
        work = planes.astype(np.int64, copy=True)
        pad = np.zeros((work.shape[0], 3), dtype=np.int64)
        work = carry_norm(np.hstack([work, pad]))
        assert (work[:, -1] >= 0).all()
        q_total = np.zeros(work.shape[0], dtype=np.int64)
        work = self._smallq_loop(work, q_total)
        return q_total, work[:, : self.width].astype(np.uint64)


def planes_add_mod(a: np.ndarray, b: np.ndarray, reducer: ModReducer) -> np.ndarray:
    """(a + b) mod m for canonical digit planes."""
    s = a.astype(np.int64) + b.astype(np.int64)
    return reducer.reduce_compact(s)


def planes_scalar_mul_mod(planes: np.ndarray, scalar: int, reducer: ModReducer) -> np.ndarray:
    """(scalar * v) mod m for 0 <= scalar < m, via digit convolution."""
    n, width = planes.shape
    sd = int_to_digits(scalar, digit_count(max(scalar, 1))).astype(np.int64)
    out = np.zeros((n, width + len(sd) + 2), dtype=np.int64)
    # partial products digit-by-digit of the scalar; products < 2^32,
    # accumulated over <= width terms after interleaved carry passes
    for j, d in enumerate(sd.tolist()):
        if d:
            out[:, j : j + width] += planes.astype(np.int64) * d
            out = carry_norm(out)
    return reducer.reduce(out)


class RnsBatch:
    """Batched conversions between digit planes and RNS limbs for one context."""

    def __init__(self, ctx, value_width: int):
        from . import modring  # local to avoid import cycle at module load

        assert isinstance(ctx, modring.RnsContext)
        self.ctx = ctx
        self.k = ctx.k
        self.value_width = value_width
        self.moduli = ctx.moduli_arr
        # digit -> limb table: pow16[p, i] = 2^(16 p) mod m_i
        self.pow16 = np.array(
            [[pow(2, DIGIT_BITS * p, m) for m in ctx.moduli] for p in range(value_width)],
            dtype=np.uint64,
        )
        self.ell_limbs = np.array(ctx.ell_limbs, dtype=np.uint64)
        ell = ctx.mod.ell
        pe = digit_count(ell)
        # CRT constants reduced mod ell, the CRT quotient as exact float
        # fractions C_i / M, and -M mod ell for the quotient correction
        self.crt_mod_ell = np.vstack(
            [int_to_digits(c % ell, pe) for c in ctx._crt]
        ).astype(np.int64)
        base = max(0, ctx.M.bit_length() - 4)
        m_scaled = _float_scaled(ctx.M, base)
        self.crt_frac = np.array(
            [_float_scaled(c, base) / m_scaled for c in ctx._crt],
            dtype=np.float64,
        )
        self.M_comp_digits = int_to_digits(
            (ell - ctx.M % ell) % ell, pe
        ).astype(np.int64)
        self.red_ell = ModReducer(ell)

    def to_limbs(self, planes: np.ndarray) -> np.ndarray:
        """(N, P) digit planes -> (N, k) uint64 limbs, limbs[:, i] = v mod m_i."""
        acc = planes @ self.pow16[: planes.shape[1]]
        return acc % self.moduli[None, :]

    def limbs_negate(self, limbs: np.ndarray) -> np.ndarray:
        """Limbs of (ell - u) for canonical u (u = 0 maps to ell, same mod ell)."""
        d = self.ell_limbs[None, :].astype(np.int64) - limbs.astype(np.int64)
        return (d % self.moduli[None, :].astype(np.int64)).astype(np.uint64)

    def from_limbs(self, limbs: np.ndarray) -> np.ndarray:
        """(N, k) limbs -> (N, P_ell) canonical digit planes of the value mod ell.

        Exact for represented integers in [0, M/2) -- guaranteed by the
        context's capacity headroom.  The CRT quotient t = sum(limb_i C_i)
        div M comes from a float estimate whose one-sided bias exceeds its
        absolute error, so it is provably exact below M/2; then
        value mod ell = (sum limb_i (C_i mod ell) + t (-M mod ell)) mod ell
        with every term non-negative.
        """
        return self.red_ell.reduce_compact(self.unreduced_planes(limbs))

    def unreduced_planes(self, limbs: np.ndarray) -> np.ndarray:
        """Non-negative int64 digit planes congruent mod ell to the
        represented value, before carry propagation and reduction (digits
        < 2^53, so two lanes can be summed and reduced together)."""
        limbs_i = limbs.astype(np.int64)
        # t = sum of integer parts + floor of the fractional sum, the
        # latter biased upward by more than its own error (~2^-15): with
        # values certified < M/2 the recovered quotient is provably exact
        p = limbs.astype(np.float64) * self.crt_frac[None, :]
        ip = np.floor(p)
        fsum = (p - ip).sum(axis=1)
        ti = (ip.sum(axis=1) + np.floor(fsum + 2.0**-13)).astype(np.int64)
        z = limbs_i @ self.crt_mod_ell
        z[:, : self.M_comp_digits.shape[0]] += ti[:, None] * self.M_comp_digits[None, :]
        return z


class SpmvKernel:
    """Batched exact SpMV kernel over one sparse matrix.

    Entry classes are split into three lanes: +-1 entries accumulate by
    limb add/sub, small word coefficients by one word product and word
    reduction per term, and full-residue entries (including flattened
    dense columns) run in a second, wider RNS whose capacity covers
    residue-by-residue products.  Lane results are CRT-folded per row and
    summed modulo ell.
    """

    def __init__(self, mod, nrows: int, width: int,
                 plus_rows, plus_cols, minus_rows, minus_cols,
                 small_rows, small_cols, small_vals,
                 full_rows, full_cols, full_vals):
        from . import modring

        self.mod = mod
        self.nrows = nrows
        self.width = width
        self.red_ell = ModReducer(mod.ell)
        self.plus_rows = np.asarray(plus_rows, dtype=np.int64)
        self.plus_cols = np.asarray(plus_cols, dtype=np.int64)
        self.minus_rows = np.asarray(minus_rows, dtype=np.int64)
        self.minus_cols = np.asarray(minus_cols, dtype=np.int64)
        self.small_rows = np.asarray(small_rows, dtype=np.int64)
        self.small_cols = np.asarray(small_cols, dtype=np.int64)
        self.small_vals = np.asarray(small_vals, dtype=np.int64)
        self.full_rows = np.asarray(full_rows, dtype=np.int64)
        self.full_cols = np.asarray(full_cols, dtype=np.int64)

        counts = np.zeros(nrows, dtype=np.int64)
        for r in (self.plus_rows, self.minus_rows, self.small_rows):
            if len(r):
                counts += np.bincount(r, minlength=nrows)
        gamma1 = max(1, int(counts.max()) if nrows else 1)
        cmax1 = max(1, int(np.abs(self.small_vals).max()) if len(small_vals) else 1)
        self.ctx1 = modring.RnsContext(mod, gamma1, cmax1)
        self.batch1 = RnsBatch(self.ctx1, width)
        self.minus_counts = (
            np.bincount(self.minus_rows, minlength=nrows).astype(np.int64)
            if len(minus_rows) else np.zeros(nrows, dtype=np.int64)
        )
        # per-limb pre-reduced small coefficients (static)
        if len(small_vals):
            m1 = self.ctx1.moduli_arr.astype(np.int64)
            self.small_mod = (self.small_vals[:, None] % m1[None, :]).astype(np.uint64)
        else:
            self.small_mod = None

        if len(full_rows):
            gamma2 = max(1, int(np.bincount(self.full_rows, minlength=nrows).max()))
            assert gamma2 < 2**22, "row degree too large for exact accumulation"
            self.ctx2 = modring.RnsContext(mod, gamma2, mod.ell - 1)
            self.batch2 = RnsBatch(self.ctx2, width)
            self.full_mod = self.batch2.to_limbs(ints_to_planes(full_vals, width))
        else:
            self.ctx2 = None
            self.batch2 = None
        assert gamma1 < 2**22, "row degree too large for exact accumulation"

    def _bincount_limbs(self, rows: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Per-row, per-limb sums; exact because limb values < 2^31 and
        row degree is bounded, so float64 bincount accumulation stays below
        2^53."""
        k = values.shape[1]
        out = np.empty((self.nrows, k), dtype=np.int64)
        for i in range(k):
            out[:, i] = np.bincount(
                rows, weights=values[:, i].astype(np.float64), minlength=self.nrows
            ).astype(np.int64)
        return out

    def apply(self, planes: np.ndarray) -> np.ndarray:
        """v = A u on digit planes; returns (nrows, P_ell) canonical planes."""
        b1 = self.batch1
        limbs = b1.to_limbs(planes)
        m1 = self.ctx1.moduli_arr.astype(np.int64)
        acc = np.zeros((self.nrows, self.ctx1.k), dtype=np.int64)
        if len(self.plus_rows):
            acc += self._bincount_limbs(self.plus_rows, limbs[self.plus_cols])
        if len(self.minus_rows):
            # sum of (ell - u) terms = count*ell - sum(u), folded limb-wise
            sums = self._bincount_limbs(self.minus_rows, limbs[self.minus_cols])
            acc += self.minus_counts[:, None] * b1.ell_limbs[None, :].astype(np.int64) - sums
        if self.small_mod is not None:
            pos = self.small_vals >= 0
            if pos.any():
                prods = (self.small_mod[pos] * limbs[self.small_cols[pos]]) % \
                    self.ctx1.moduli_arr[None, :]
                acc += self._bincount_limbs(self.small_rows[pos], prods)
            neg = ~pos
            if neg.any():
                neg_limbs = b1.limbs_negate(limbs[self.small_cols[neg]])
                c = ((-self.small_vals[neg])[:, None] % m1[None, :]).astype(np.uint64)
                prods = (c * neg_limbs) % self.ctx1.moduli_arr[None, :]
                acc += self._bincount_limbs(self.small_rows[neg], prods)
        acc %= m1[None, :]
        z = b1.unreduced_planes(acc.astype(np.uint64))

        if self.ctx2 is not None:
            limbs2 = self.batch2.to_limbs(planes)
            prods = (self.full_mod * limbs2[self.full_cols]) % \
                self.ctx2.moduli_arr[None, :]
            acc2 = np.zeros((self.nrows, self.ctx2.k), dtype=np.int64)
            k2 = self.ctx2.k
            for i in range(k2):
                acc2[:, i] = np.bincount(
                    self.full_rows, weights=prods[:, i].astype(np.float64),
                    minlength=self.nrows,
                ).astype(np.int64)
            acc2 %= self.ctx2.moduli_arr[None, :].astype(np.int64)
            # both lanes' pre-reduction digits fit int64 side by side:
            # one shared carry + reduction pass
            z += self.batch2.unreduced_planes(acc2.astype(np.uint64))
        return self.red_ell.reduce_compact(z)
