#!/usr/bin/env python3
"""Exact arithmetic mod a large prime, and the RNS trick that lets a
sparse-row dot product accumulate in machine words."""

import gmpy2
import numpy as np

from sldlag.modring import (
    TAG_MINUS_ONE, TAG_PLUS_ONE, TAG_SMALL,
    PrimeModulus, RnsContext, from_rns, rns_dot_accumulate, to_rns,
)

# a 202-bit prime, the size used for the record binary-field computation
ell = PrimeModulus(int(gmpy2.next_prime(2**201)))

print(f"modulus: {ell.ell} ({ell.bit_length} bits)")

rng = np.random.default_rng(42)
a, b = ell.random_residues(rng, 2)
print(f"a*b mod ell = {ell.mul(a, b)}")
print(f"a^-1 check  = {ell.mul(a, ell.inv(a)) == 1}")

# An RNS context sized for rows of weight <= 100 with word coefficients:
# k limb primes whose product comfortably exceeds any row accumulation.
ctx = RnsContext(ell, gamma_max=100, c_max=2**31 - 1)
print(f"\nRNS context: k={ctx.k} limb primes, first={ctx.moduli[0]}")

# a synthetic row: 90% +-1 coefficients, the rest small words
values = ell.random_residues(rng, 100)
coeffs = []
for i in range(100):
    r = rng.random()
    if r < 0.45:
        coeffs.append((TAG_PLUS_ONE, None))
    elif r < 0.9:
        coeffs.append((TAG_MINUS_ONE, None))
    else:
        coeffs.append((TAG_SMALL, int(rng.integers(2, 1000))))

acc = rns_dot_accumulate(coeffs, [to_rns(u, ctx) for u in values], ctx)
got = from_rns(acc, ctx)

reference = 0
for (tag, c), u in zip(coeffs, values):
    reference += u if tag == TAG_PLUS_ONE else -u if tag == TAG_MINUS_ONE else c * u
reference %= ell.ell

print(f"row dot, RNS limbs then CRT : {got}")
print(f"row dot, big-int reference  : {reference}")
print(f"agree: {got == reference}")
