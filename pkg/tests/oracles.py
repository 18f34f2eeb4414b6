"""Independent brute-force oracles used across the test suite.

Everything here is deliberately naive: dense matrices as lists of Python
ints, schoolbook Gaussian elimination mod ell.  These are the ground
truth the package's optimized paths are checked against.
"""


def to_dense(A):
    """Materialize a SparseMatrix as nrows x total_cols lists of ints."""
    out = [[0] * A.total_cols for _ in range(A.nrows)]
    for i in range(A.nrows):
        for c, v in A.row_entries(i):
            out[i][c] = v
    return out


def dense_matvec(M, u, ell):
    return [sum(a * x for a, x in zip(row, u)) % ell for row in M]


def rref(M, ell):
    """Reduced row echelon form mod ell; returns (rref matrix, pivot cols)."""
    M = [row[:] for row in M]
    nrows = len(M)
    ncols = len(M[0]) if nrows else 0
    pivots = []
    r = 0
    for c in range(ncols):
        pr = next((i for i in range(r, nrows) if M[i][c] % ell), None)
        if pr is None:
            continue
        M[r], M[pr] = M[pr], M[r]
        inv = pow(M[r][c], -1, ell)
        M[r] = [x * inv % ell for x in M[r]]
        for i in range(nrows):
            if i != r and M[i][c]:
                f = M[i][c]
                M[i] = [(x - f * y) % ell for x, y in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
        if r == nrows:
            break
    return M, pivots


def dense_rank(M, ell):
    return len(rref(M, ell)[1])


def dense_kernel_basis(M, ell, ncols=None):
    """Basis of the right kernel of M over Z/ellZ."""
    if not M:
        if not ncols:
            return []
        return [[1 if i == j else 0 for i in range(ncols)] for j in range(ncols)]
    ncols = len(M[0])
    R, pivots = rref(M, ell)
    pivot_set = set(pivots)
    free = [c for c in range(ncols) if c not in pivot_set]
    basis = []
    for fc in free:
        v = [0] * ncols
        v[fc] = 1
        for r, pc in enumerate(pivots):
            v[pc] = (-R[r][fc]) % ell
        basis.append(v)
    return basis


def dense_power_sequence(M, x, y, ell, count):
    """a_i = x^T (M^i y) computed by repeated dense mat-vec."""
    seq = []
    v = y[:]
    for _ in range(count):
        seq.append(sum(a * b for a, b in zip(x, v)) % ell)
        v = dense_matvec(M, v, ell)
    return seq


def annihilator_exists(seq, degree, ell):
    """True iff some monic polynomial of the given degree annihilates the
    whole sequence: used to certify Berlekamp-Massey minimality via the
    rank of the underlying Hankel system."""
    if degree == 0:
        return all(s % ell == 0 for s in seq)
    rows = []
    rhs = []
    for k in range(len(seq) - degree):
        rows.append(seq[k : k + degree])
        rhs.append((-seq[k + degree]) % ell)
    aug = [row + [b] for row, b in zip(rows, rhs)]
    return dense_rank([r[:-1] for r in aug], ell) == dense_rank(aug, ell)
