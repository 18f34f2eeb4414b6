"""
Synthetic DLP-style matrices with a planted kernel.

Matrices out of relation collection share a statistical shape: nearly
uniform row weight, column density high for the leading columns and
decaying gradually, ~90% of coefficients +-1, and (for NFS) a handful of
dense residue columns.  The generator reproduces that shape with a
power-law column distribution and then forces singularity by rewriting a
few columns as random linear combinations of two others, so every
generated matrix has a kernel vector with a known sparse witness.

Deterministic in the seed: the same profile always yields bit-identical
SLDM bytes.
"""

from dataclasses import dataclass, replace

import numpy as np

from .modring import TAG_FULL, TAG_MINUS_ONE, TAG_PLUS_ONE, TAG_SMALL, PrimeModulus
from .spmatrix import SparseMatrix, classify

FFS_ROW_WEIGHT = 100     # reduced FFS matrix: ~100 non-zeros per row
NFS_ROW_WEIGHT = 150     # reduced NFS matrix: ~150 non-zeros per row
NFS_DENSE_COLS = 5
PM1_TARGET = 0.90


@dataclass(frozen=True)
class CorpusProfile:
    n: int
    gamma: float
    pm1_fraction: float = PM1_TARGET
    density_decay: float = 0.5
    dense_cols: int = 0
    planted_kernel_cols: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 3:
            raise ValueError("gamma must be >= 3")
        if self.planted_kernel_cols < 1:
            raise ValueError("at least one planted kernel column required")
        if self.n < 10 * self.gamma:
            raise ValueError("n must be at least 10 * gamma")

    def scaled(self, n: int, seed=None) -> "CorpusProfile":
        return replace(self, n=n, seed=self.seed if seed is None else seed)


def profile_ffs(n: int = 100_000, seed: int = 0) -> CorpusProfile:
    """FFS-like preset: gamma 100, 90% +-1, no dense columns."""
    return CorpusProfile(n=n, gamma=FFS_ROW_WEIGHT, pm1_fraction=PM1_TARGET,
                         dense_cols=0, seed=seed)


def profile_nfs(n: int = 100_000, seed: int = 0) -> CorpusProfile:
    """NFS-like preset: gamma 150, 5 dense residue columns."""
    return CorpusProfile(n=n, gamma=NFS_ROW_WEIGHT, pm1_fraction=PM1_TARGET,
                         dense_cols=NFS_DENSE_COLS, seed=seed)


def _sample_rows(rng, n, ncols, weights, decay):
    """Distinct column picks per row, power-law distributed, vectorized.

    Keeps a single sorted array of (row, col) keys; top-up rounds for rows
    that lost picks to duplicates merge small sorted batches in, so the
    10^7-entry case is sorted only once.
    """
    probs = (np.arange(1, ncols + 1, dtype=np.float64)) ** (-decay)
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]

    def draw(counts):
        total = int(counts.sum())
        r = np.repeat(np.arange(n, dtype=np.int64), counts)
        c = np.searchsorted(cdf, rng.random(total)).astype(np.int64)
        return np.sort(r * ncols + c)

    pairs = draw(weights)
    keep = np.empty(len(pairs), dtype=bool)
    keep[0] = True
    np.not_equal(pairs[1:], pairs[:-1], out=keep[1:])
    pairs = pairs[keep]
    have = np.bincount(pairs // ncols, minlength=n)
    for _ in range(8):
        need = np.clip(weights - have, 0, None)
        if not need.any():
            break
        batch = draw(need)
        batch = batch[np.concatenate([[True], batch[1:] != batch[:-1]])]
        pos = np.searchsorted(pairs, batch)
        fresh = np.ones(len(batch), dtype=bool)
        inb = pos < len(pairs)
        fresh[inb] = pairs[pos[inb]] != batch[inb]
        batch = batch[fresh]
        if not len(batch):
            break
        pairs = np.insert(pairs, pos[fresh], batch)
        have += np.bincount(batch // ncols, minlength=n)
    return pairs // ncols, pairs % ncols


def generate_with_witnesses(profile: CorpusProfile, ell: PrimeModulus):
    """Build the matrix and the sparse kernel witnesses of the planted
    columns (each witness has at most 3 non-zeros)."""
    n = profile.n
    dc = profile.dense_cols
    ncols = n - dc
    rng = np.random.default_rng(profile.seed)

    weights = np.rint(
        rng.normal(profile.gamma, 0.1 * profile.gamma, size=n)
    ).astype(np.int64)
    np.clip(weights, 3, max(3, ncols // 2), out=weights)
    rows, cols = _sample_rows(rng, n, ncols, weights, profile.density_decay)
    nnz = len(rows)

    # coefficient classes: +-1 with probability pm1_fraction, small otherwise
    u = rng.random(nnz)
    pm1 = profile.pm1_fraction
    tags = np.full(nnz, TAG_SMALL, dtype=np.uint8)
    tags[u < pm1 / 2] = TAG_PLUS_ONE
    tags[(u >= pm1 / 2) & (u < pm1)] = TAG_MINUS_ONE
    smalls = np.zeros(nnz, dtype=np.int64)
    smalls[tags == TAG_PLUS_ONE] = 1
    smalls[tags == TAG_MINUS_ONE] = -1
    sm = tags == TAG_SMALL
    if ell.ell <= 5:
        # no representable small class: fall back to +-1
        flip = rng.random(int(sm.sum())) < 0.5
        tags[sm] = np.where(flip, TAG_PLUS_ONE, TAG_MINUS_ONE)
        smalls[sm] = np.where(flip, 1, -1)
    else:
        hi = min(2**31, ell.ell - 1)
        mags = rng.integers(2, hi, size=int(sm.sum()), dtype=np.int64)
        signs = np.where(rng.random(int(sm.sum())) < 0.5, 1, -1)
        smalls[sm] = mags * signs

    dense = [
        (ncols + j, ell.random_residues(rng, n)) for j in range(dc)
    ]

    # plant the kernel: rewrite chosen columns as alpha*a + beta*b
    planted = sorted(
        int(c) for c in rng.choice(ncols, size=profile.planted_kernel_cols,
                                   replace=False)
    )
    planted_set = set(planted)
    base_pool = np.array(
        [c for c in range(ncols + dc) if c not in planted_set], dtype=np.int64
    )
    witnesses = []
    col_entries = {}  # pending replacement entries per planted column

    def column_of(c):
        # before planting, every sparse entry is +-1 or small: the signed
        # word value is the whole story
        if c >= ncols:
            col = dense[c - ncols][1]
            return [(i, v) for i, v in enumerate(col) if v]
        mask = cols == c
        return [
            (int(r), int(s) % ell.ell)
            for r, s in zip(rows[mask], smalls[mask])
        ]

    for t in planted:
        a, b = (int(x) for x in rng.choice(base_pool, size=2, replace=False))
        # dense columns take part in the combinations when present
        if dc and t == planted[0]:
            b = ncols + int(rng.integers(0, dc))
        alpha = 1 + ell.random_residues(rng, 1)[0] % (ell.ell - 1)
        beta = 1 + ell.random_residues(rng, 1)[0] % (ell.ell - 1)
        combo = {}
        for src, coef in ((a, alpha), (b, beta)):
            for i, v in column_of(src):
                combo[i] = (combo.get(i, 0) + coef * v) % ell.ell
        col_entries[t] = {i: v for i, v in combo.items() if v}
        w = {t: 1, a: (-alpha) % ell.ell, b: (-beta) % ell.ell}
        witnesses.append(w)

    # drop original entries of the planted columns, splice in replacements
    # (base arrays stay (row, col)-sorted; extras are few, merge-insert them)
    keep = ~np.isin(cols, planted)
    rows, cols, tags, smalls = rows[keep], cols[keep], tags[keep], smalls[keep]
    extra_rows, extra_cols, extra_vals = [], [], []
    for t in planted:
        for i, v in sorted(col_entries[t].items()):
            extra_rows.append(i)
            extra_cols.append(t)
            extra_vals.append(v)
    er = np.array(extra_rows, dtype=np.int64)
    ec = np.array(extra_cols, dtype=np.int64)
    eorder = np.lexsort((ec, er))
    er, ec = er[eorder], ec[eorder]
    evals = [extra_vals[i] for i in eorder.tolist()]
    etags = np.empty(len(evals), dtype=np.uint8)
    esmalls = np.empty(len(evals), dtype=np.int64)
    for j, v in enumerate(evals):
        etags[j], esmalls[j] = classify(v, ell)
    pos = np.searchsorted(rows * ncols + cols, er * ncols + ec)
    all_rows = np.insert(rows, pos, er)
    all_cols = np.insert(cols, pos, ec)
    all_tags = np.insert(tags, pos, etags)
    all_smalls = np.insert(smalls, pos, esmalls)
    fulls = {}
    final_pos = pos + np.arange(len(evals))
    for j, v in enumerate(evals):
        if etags[j] == TAG_FULL:
            fulls[int(final_pos[j])] = v
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(all_rows, minlength=n), out=row_ptr[1:])

    A = SparseMatrix(ell, n, ncols, row_ptr, all_cols, all_tags, all_smalls,
                     fulls, dense)
    wit_vectors = []
    for w in witnesses:
        vec = [0] * (ncols + dc)
        for c, v in w.items():
            vec[c] = v
        wit_vectors.append(vec)
    return A, wit_vectors


def generate(profile: CorpusProfile, ell: PrimeModulus) -> SparseMatrix:
    """The matrix alone; see generate_with_witnesses."""
    return generate_with_witnesses(profile, ell)[0]
