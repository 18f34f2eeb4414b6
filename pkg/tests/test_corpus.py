"""Synthetic corpus generator: statistics and the planted kernel."""

import numpy as np
import pytest
import scipy.stats

import oracles
from sldlag.corpus import CorpusProfile, generate, generate_with_witnesses, profile_ffs, profile_nfs
from sldlag.modring import PrimeModulus
from sldlag.spmatrix import matrix_stats, spmv_sequential, store_matrix

M64 = PrimeModulus(2**61 - 1)
M1009 = PrimeModulus(1009)


def test_presets_match_reference_statistics():
    assert profile_ffs().gamma == 100
    assert profile_ffs().pm1_fraction == 0.90
    assert profile_ffs().dense_cols == 0
    assert profile_nfs().gamma == 150
    assert profile_nfs().dense_cols == 5
    assert profile_ffs().n == 100_000  # desk-scale default


def test_planted_kernel_found_by_dense_oracle():
    prof = CorpusProfile(n=100, gamma=10, seed=42, planted_kernel_cols=1)
    A, wits = generate_with_witnesses(prof, M64)
    D = oracles.to_dense(A)
    basis = oracles.dense_kernel_basis(D, M64.ell)
    assert len(basis) >= 1
    w = basis[0]
    assert any(w) and all(x == 0 for x in oracles.dense_matvec(D, w, M64.ell))
    # the sparse witness is itself a kernel vector with <= 3 non-zeros
    for wit in wits:
        assert 1 <= sum(1 for x in wit if x) <= 3
        assert spmv_sequential(A, wit) == [0] * A.nrows


def test_planted_dimension_lower_bound():
    prof = CorpusProfile(n=150, gamma=8, seed=7, planted_kernel_cols=4)
    A = generate(prof, M1009)
    D = oracles.to_dense(A)
    assert len(oracles.dense_kernel_basis(D, M1009.ell)) >= 4


def test_kernel_always_nontrivial_across_seeds():
    for seed in range(10):
        prof = CorpusProfile(n=80, gamma=6, seed=seed)
        A, wits = generate_with_witnesses(prof, M1009)
        for wit in wits:
            assert any(wit)
            assert spmv_sequential(A, wit) == [0] * A.nrows


def test_dense_columns_participate():
    prof = CorpusProfile(n=120, gamma=8, seed=3, dense_cols=3,
                         planted_kernel_cols=2)
    A, wits = generate_with_witnesses(prof, M64)
    assert len(A.dense_cols) == 3
    assert A.total_cols == 120
    # first witness touches a dense column by construction
    assert any(c >= A.ncols for c, v in enumerate(wits[0]) if v)
    for wit in wits:
        assert spmv_sequential(A, wit) == [0] * A.nrows


def test_determinism_bit_identical(tmp_path):
    prof = CorpusProfile(n=200, gamma=12, seed=99, dense_cols=2)
    a_path, b_path = tmp_path / "a.sldm", tmp_path / "b.sldm"
    store_matrix(generate(prof, M64), a_path)
    store_matrix(generate(prof, M64), b_path)
    assert a_path.read_bytes() == b_path.read_bytes()
    other = generate(CorpusProfile(n=200, gamma=12, seed=100, dense_cols=2), M64)
    store_matrix(other, a_path)
    assert a_path.read_bytes() != b_path.read_bytes()


def test_pm1_fraction_within_tolerance():
    prof = profile_ffs(n=10_000, seed=5)
    A = generate(prof, M64)
    s = matrix_stats(A)
    assert abs(s.pm1_fraction - 0.90) <= 0.02
    assert abs(s.avg_row_weight - 100) <= 5


def test_row_weight_concentration():
    prof = CorpusProfile(n=2000, gamma=40, seed=11)
    A = generate(prof, M64)
    s = matrix_stats(A)
    assert s.row_weight_stddev <= 0.15 * s.avg_row_weight


def test_column_weights_decay():
    prof = profile_ffs(n=10_000, seed=1)
    A = generate(prof, M64)
    w = np.bincount(A.col_idx, minlength=A.ncols)
    rho = scipy.stats.spearmanr(np.arange(A.ncols), w).statistic
    assert rho <= -0.5
    # leading columns denser than trailing ones in expectation
    assert w[:100].mean() > 2 * w[-100:].mean()


def test_profile_validation():
    with pytest.raises(ValueError):
        CorpusProfile(n=100, gamma=2)
    with pytest.raises(ValueError):
        CorpusProfile(n=100, gamma=10, planted_kernel_cols=0)
    with pytest.raises(ValueError):
        CorpusProfile(n=50, gamma=10)
