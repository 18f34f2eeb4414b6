"""
Exact arithmetic in Z/ellZ for a large prime ell, plus a Residue Number
System (RNS) representation of intermediate values.

Residues are plain Python integers in [0, ell) (the canonical
representative).  The RNS side decomposes an integer into limbs modulo
pairwise-coprime 31-bit primes, so that a full sparse-row dot product can
be accumulated limb-wise in machine words without ever reducing modulo
ell; the canonical value is recovered once per row by CRT.

Negative coefficients (-1 and negative small values) are folded in as
non-negative contributions c*(ell - u), which is congruent to -c*u modulo
ell.  The accumulated integer therefore stays in [0, gamma*cmax*ell], and
contexts are built with M strictly above that, slightly more headroom
than the declared capacity_bound = gamma*cmax*(ell-1).

Fixed serialization of residues, used by every file format in this
package: little-endian, fixed width of ceil(bit_length/8) bytes.
"""

import gmpy2
import numpy as np

# Coefficient class tags, shared with spmatrix (kept as bare ints to avoid
# an import cycle; spmatrix re-exports them under the same values).
TAG_PLUS_ONE = 0
TAG_MINUS_ONE = 1
TAG_SMALL = 2
TAG_FULL = 3

# Largest prime that fits the RNS limb budget: products of two limbs plus
# one more limb must fit in an unsigned 64-bit accumulator.
_LIMB_BOUND = 2**31


class NotInvertible(ZeroDivisionError):
    """Raised when inverting 0 modulo ell."""


class ContractViolation(AssertionError):
    """An RNS accumulation exceeded the context's declared capacity."""


class PrimeModulus:
    """The prime ell defining Z/ellZ.

    ell must be an odd probable prime (Miller-Rabin error < 2^-64) with
    2 <= bit_length <= 1024.  The operating range of interest is 160-650
    bits but small moduli are accepted for testing.
    """

    def __init__(self, ell: int):
        ell = int(ell)
        if ell < 3 or ell % 2 == 0:
            raise ValueError(f"modulus must be an odd prime >= 3, got {ell}")
        if not 2 <= ell.bit_length() <= 1024:
            raise ValueError(f"modulus bit length {ell.bit_length()} outside [2, 1024]")
        # 40 Miller-Rabin rounds: error probability <= 4^-40 < 2^-64
        if not gmpy2.is_prime(ell, 40):
            raise ValueError(f"{ell} failed the probabilistic primality test")
        self.ell = ell
        self.bit_length = ell.bit_length()
        self.byte_width = (self.bit_length + 7) // 8

    def __eq__(self, other):
        return isinstance(other, PrimeModulus) and self.ell == other.ell

    def __hash__(self):
        return hash(self.ell)

    def __repr__(self):
        return f"PrimeModulus({self.ell}, bits={self.bit_length})"

    def check(self, a: int) -> int:
        if not 0 <= a < self.ell:
            raise ValueError(f"{a} is not a canonical residue mod {self.ell}")
        return a

    def add(self, a: int, b: int) -> int:
        s = a + b
        return s - self.ell if s >= self.ell else s

    def sub(self, a: int, b: int) -> int:
        s = a - b
        return s + self.ell if s < 0 else s

    def mul(self, a: int, b: int) -> int:
        return a * b % self.ell

    def inv(self, a: int) -> int:
        if a % self.ell == 0:
            raise NotInvertible(f"0 has no inverse mod {self.ell}")
        return pow(a, -1, self.ell)

    def neg(self, a: int) -> int:
        return self.ell - a if a else 0

    def random_residues(self, rng: np.random.Generator, count: int) -> list[int]:
        """count residues drawn uniformly (bias < 2^-64) from a seeded RNG."""
        words = (self.bit_length + 63) // 64 + 1
        raw = rng.integers(0, 2**64, size=(count, words), dtype=np.uint64)
        out = []
        for row in raw:
            x = 0
            for w in reversed(row.tolist()):
                x = (x << 64) | int(w)
            out.append(x % self.ell)
        return out

    # -- fixed serialization ------------------------------------------------

    def residue_to_bytes(self, a: int) -> bytes:
        return int(a).to_bytes(self.byte_width, "little")

    def residue_from_bytes(self, data: bytes) -> int:
        a = int.from_bytes(data, "little")
        return self.check(a)

    def vector_to_bytes(self, vec) -> bytes:
        w = self.byte_width
        return b"".join(int(a).to_bytes(w, "little") for a in vec)

    def vector_from_bytes(self, data: bytes, count: int) -> list[int]:
        w = self.byte_width
        if len(data) != count * w:
            raise ValueError(f"expected {count * w} bytes, got {len(data)}")
        return [
            self.check(int.from_bytes(data[i * w : (i + 1) * w], "little"))
            for i in range(count)
        ]


def residue_arith(mod: PrimeModulus, a: int, b: int, op: str) -> int:
    """Canonical (a op b) mod ell for op in {add, sub, mul}."""
    mod.check(a)
    mod.check(b)
    if op == "add":
        return mod.add(a, b)
    if op == "sub":
        return mod.sub(a, b)
    if op == "mul":
        return mod.mul(a, b)
    raise ValueError(f"unknown op {op!r}")


def residue_inverse(mod: PrimeModulus, a: int) -> int:
    """b with a*b = 1 mod ell; raises NotInvertible for a = 0."""
    mod.check(a)
    return mod.inv(a)


class RnsValue:
    """k machine-word limbs representing one integer in [0, M) by CRT."""

    __slots__ = ("limbs",)

    def __init__(self, limbs):
        self.limbs = tuple(int(x) for x in limbs)

    def __eq__(self, other):
        return isinstance(other, RnsValue) and self.limbs == other.limbs

    def __hash__(self):
        return hash(self.limbs)

    def __repr__(self):
        return f"RnsValue{self.limbs}"


class RnsContext:
    """Pairwise-coprime 31-bit prime moduli m_1..m_k with M = prod m_i.

    k is the smallest count such that M exceeds the accumulation headroom
    gamma_max * c_max * ell (moduli chosen as the largest 31-bit primes,
    descending).  capacity_bound = gamma_max * c_max * (ell - 1) is the
    declared bound on a row dot product; the extra factor covers the
    non-negative folding of -1 coefficients.
    """

    def __init__(self, mod: PrimeModulus, gamma_max: int, c_max: int):
        if gamma_max < 1 or c_max < 1:
            raise ValueError("gamma_max and c_max must be >= 1")
        self.mod = mod
        self.gamma_max = gamma_max
        self.c_max = c_max
        self.capacity_bound = gamma_max * c_max * (mod.ell - 1)
        # headroom: 2x covers the non-negative folding of -1 coefficients
        # AND certifies accumulated values < M/2, which lets the batched
        # CRT recover its quotient from a float estimate with no fallback
        need = 2 * gamma_max * c_max * mod.ell
        moduli = []
        M = 1
        p = _LIMB_BOUND
        while M <= need:
            p = int(gmpy2.prev_prime(p))
            moduli.append(p)
            M *= p
        self.moduli = tuple(moduli)
        self.M = M
        self.k = len(moduli)
        self.moduli_arr = np.array(moduli, dtype=np.uint64)
        self.ell_limbs = tuple(mod.ell % m for m in moduli)
        # CRT reconstruction constants: x = sum(limb_i * crt_i) mod M
        self._crt = []
        for m in moduli:
            q = M // m
            self._crt.append(q * pow(q, -1, m) % M)

    def __repr__(self):
        return f"RnsContext(k={self.k}, ell bits={self.mod.bit_length})"


def to_rns(a: int, ctx: RnsContext) -> RnsValue:
    """Limb decomposition limbs[i] = a mod m_i of a canonical residue."""
    ctx.mod.check(a)
    return RnsValue(a % m for m in ctx.moduli)


def from_rns(v: RnsValue, ctx: RnsContext) -> int:
    """CRT reconstruction of v, reduced to the canonical residue mod ell.

    The caller guarantees (via the capacity contract) that the represented
    integer did not wrap modulo M.
    """
    x = 0
    for limb, c in zip(v.limbs, ctx._crt):
        x += limb * c
    return x % ctx.M % ctx.mod.ell


def rns_zero(ctx: RnsContext) -> RnsValue:
    return RnsValue((0,) * ctx.k)


def rns_dot_accumulate(coeffs, inputs, ctx: RnsContext, check: bool = False) -> RnsValue:
    """Accumulate sum of coeff_t * input_t limb-wise, one reduction per term.

    coeffs is a list of (tag, value) pairs using the coefficient classes of
    spmatrix: (TAG_PLUS_ONE, None), (TAG_MINUS_ONE, None), (TAG_SMALL, c)
    with |c| <= c_max, or (TAG_FULL, f) with f a canonical residue.  +-1
    terms use limb add/sub only.  Negative terms are folded in as
    c*(ell - u); Full terms are pre-reduced to (f*u) mod ell so that every
    contribution is non-negative and the total stays below M.

    With check=True a shadow big-integer accumulator verifies the capacity
    contract and raises ContractViolation if it is exceeded.
    """
    if len(coeffs) != len(inputs):
        raise ValueError("coeffs and inputs must have equal length")
    if len(coeffs) > ctx.gamma_max:
        raise ContractViolation(
            f"{len(coeffs)} terms exceed declared gamma_max={ctx.gamma_max}"
        )
    k = ctx.k
    moduli = ctx.moduli
    ell_limbs = ctx.ell_limbs
    acc = [0] * k
    shadow = 0
    for (tag, value), rv in zip(coeffs, inputs):
        limbs = rv.limbs
        if tag == TAG_PLUS_ONE:
            for i in range(k):
                s = acc[i] + limbs[i]
                acc[i] = s - moduli[i] if s >= moduli[i] else s
            if check:
                shadow += from_rns(rv, ctx)
        elif tag == TAG_MINUS_ONE:
            for i in range(k):
                s = acc[i] + ell_limbs[i] - limbs[i]
                m = moduli[i]
                if s < 0:
                    s += m
                elif s >= m:
                    s -= m
                acc[i] = s
            if check:
                shadow += ctx.mod.ell - from_rns(rv, ctx)
        elif tag == TAG_SMALL:
            c = int(value)
            if abs(c) > ctx.c_max:
                raise ContractViolation(f"small coefficient {c} exceeds c_max")
            if c >= 0:
                for i in range(k):
                    m = moduli[i]
                    acc[i] = (acc[i] + c % m * limbs[i]) % m
                if check:
                    shadow += c * from_rns(rv, ctx)
            else:
                for i in range(k):
                    m = moduli[i]
                    u_neg = ell_limbs[i] - limbs[i]
                    if u_neg < 0:
                        u_neg += m
                    acc[i] = (acc[i] + (-c) % m * u_neg) % m
                if check:
                    shadow += (-c) * (ctx.mod.ell - from_rns(rv, ctx))
        elif tag == TAG_FULL:
            f = ctx.mod.check(int(value))
            prod = f * from_rns(rv, ctx) % ctx.mod.ell
            for i in range(k):
                m = moduli[i]
                s = acc[i] + prod % m
                acc[i] = s - m if s >= m else s
            if check:
                shadow += prod
        else:
            raise ValueError(f"unknown coefficient tag {tag}")
    if check and shadow >= ctx.M:
        raise ContractViolation(
            f"accumulated {shadow.bit_length()}-bit value wrapped modulo M"
        )
    return RnsValue(acc)
