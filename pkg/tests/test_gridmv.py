"""Grid SpMV: bit-exact equivalence with the sequential product, the
communication model, transports, and failure detection."""

import numpy as np
import pytest

from sldlag import vecops
from sldlag.balance import GridSpec, balance_permutation, padded_size, permuted_padded, split
from sldlag.corpus import CorpusProfile, generate
from sldlag.gridmv import (
    DroppingTransport,
    Grid,
    GridProtocolError,
    GridTimeoutError,
    Message,
    SocketTransport,
    comm_volume_model,
    decode_message,
    run_iterations,
)
from sldlag.modring import PrimeModulus
from sldlag.spmatrix import spmv_sequential

M1009 = PrimeModulus(1009)
M200 = PrimeModulus(2**200 - 75)


def make_grid(n, gspec, mod, seed, transport="channel", gamma=5):
    A = generate(CorpusProfile(n=n, gamma=gamma, seed=seed), mod)
    p = balance_permutation(A, gspec)
    bs = split(A, p, gspec)
    B = permuted_padded(A, p, gspec)
    return Grid(bs, mod, transport=transport), B


def to_planes(vec, mod):
    return vecops.ints_to_planes(vec, vecops.digit_count(mod.ell))


def run_grid(grid, mod, u, k=1, tap=None):
    grid.load_vector(to_planes(u, mod))
    run_iterations(grid, k, tap=tap)
    return vecops.planes_to_ints(grid.assembled())


def seq_power(B, u, k):
    v = list(u)
    for _ in range(k):
        v = spmv_sequential(B, v)
    return v


def test_1x1_equals_sequential():
    grid, B = make_grid(50, GridSpec(1, 1), M1009, seed=0)
    rng = np.random.default_rng(1)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    assert run_grid(grid, M1009, u) == spmv_sequential(B, u)
    assert grid.comm_log.total_bytes() == 0


def test_2x2_collector_trace():
    # after the reduce phase, node (0,0) holds v0 = A00 u0 + A01 u1 and
    # node (1,1) holds v1
    grid, B = make_grid(60, GridSpec(2, 2), M1009, seed=2)
    rng = np.random.default_rng(3)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    grid.load_vector(to_planes(u, M1009))
    v = spmv_sequential(B, u)
    half = B.nrows // 2
    run_iterations(grid, 1)
    # post-iteration, out fragments are the new input fragments
    got0 = vecops.planes_to_ints(grid.workers[(0, 0)].in_fragment)
    got1 = vecops.planes_to_ints(grid.workers[(1, 1)].in_fragment)
    assert got0 == v[:half]
    assert got1 == v[half:]


@pytest.mark.parametrize("gspec", [GridSpec(2, 2), GridSpec(4, 4),
                                   GridSpec(2, 4), GridSpec(2, 1),
                                   GridSpec(4, 2), GridSpec(3, 2)])
def test_grid_equals_sequential(gspec):
    grid, B = make_grid(64, gspec, M1009, seed=4)
    rng = np.random.default_rng(5)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    assert run_grid(grid, M1009, u) == spmv_sequential(B, u)


def test_grid_large_modulus_multiple_iterations():
    gspec = GridSpec(2, 2)
    grid, B = make_grid(50, gspec, M200, seed=6)
    rng = np.random.default_rng(7)
    u = M200.random_residues(rng, B.ncols)
    assert run_grid(grid, M200, u, k=10) == seq_power(B, u, 10)


def test_k0_is_identity():
    grid, B = make_grid(50, GridSpec(2, 2), M1009, seed=8)
    rng = np.random.default_rng(9)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    assert run_grid(grid, M1009, u, k=0) == u
    assert grid.comm_log.entries == []


def test_composition():
    gspec = GridSpec(2, 1)
    grid1, B = make_grid(50, gspec, M1009, seed=10)
    grid2, _ = make_grid(50, gspec, M1009, seed=10)
    rng = np.random.default_rng(11)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    two = run_grid(grid1, M1009, u, k=2)
    one = run_grid(grid2, M1009, u, k=1)
    grid2.load_vector(to_planes(one, M1009))
    run_iterations(grid2, 1)
    assert vecops.planes_to_ints(grid2.assembled()) == two


def test_tap_observes_each_iteration():
    grid, B = make_grid(50, GridSpec(2, 2), M1009, seed=12)
    rng = np.random.default_rng(13)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    seen = []
    run_grid(grid, M1009, u, k=3,
             tap=lambda it, planes: seen.append((it, vecops.planes_to_ints(planes))))
    assert [it for it, _ in seen] == [0, 1, 2]
    assert seen[0][1] == spmv_sequential(B, u)
    assert seen[2][1] == seq_power(B, u, 3)


@pytest.mark.parametrize("gspec", [GridSpec(1, 1), GridSpec(2, 2),
                                   GridSpec(2, 1), GridSpec(2, 4),
                                   GridSpec(3, 3)])
def test_comm_log_matches_model(gspec):
    grid, B = make_grid(50, gspec, M1009, seed=14)
    rng = np.random.default_rng(15)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    run_grid(grid, M1009, u, k=3)
    import math
    fine = (grid.bs.n_padded // math.lcm(gspec.r, gspec.c)) * M1009.byte_width
    predicted = comm_volume_model(gspec, fine)
    for e in grid.comm_log.entries:
        assert e.total_bytes == predicted


def test_comm_model_examples():
    assert comm_volume_model(GridSpec(1, 1), 123) == 0
    assert comm_volume_model(GridSpec(2, 2), 100) == 400


def test_socket_transport_bit_identical():
    gspec = GridSpec(2, 2)
    grid_c, B = make_grid(50, gspec, M200, seed=16, transport="channel")
    grid_s, _ = make_grid(50, gspec, M200, seed=16, transport="socket")
    rng = np.random.default_rng(17)
    u = M200.random_residues(rng, B.ncols)
    out_c = run_grid(grid_c, M200, u, k=2)
    out_s = run_grid(grid_s, M200, u, k=2)
    assert out_c == out_s
    assert [e.total_bytes for e in grid_c.comm_log.entries] == \
        [e.total_bytes for e in grid_s.comm_log.entries]
    grid_s.transport.close()


def test_message_wire_roundtrip():
    rng = np.random.default_rng(18)
    payload = to_planes(M200.random_residues(rng, 9), M200)
    m = Message(1, (2, 3), (4, 5), 77, payload)
    back = decode_message(m.encode(M200), M200)
    assert back.kind == 1 and back.src == (2, 3) and back.dst == (4, 5)
    assert back.iteration == 77
    assert np.array_equal(back.payload, payload)


def test_lost_message_raises_timeout():
    gspec = GridSpec(2, 2)
    A = generate(CorpusProfile(n=50, gamma=5, seed=19), M1009)
    p = balance_permutation(A, gspec)
    bs = split(A, p, gspec)
    grid = Grid(bs, M1009, transport="channel")
    grid.transport = DroppingTransport(
        grid.transport, lambda m: m.kind == 0 and m.src == (0, 1)
    )
    rng = np.random.default_rng(20)
    u = [int(x) for x in rng.integers(0, 1009, size=bs.n_padded)]
    grid.load_vector(to_planes(u, M1009))
    with pytest.raises(GridTimeoutError):
        run_iterations(grid, 1)


def test_iteration_tag_mismatch_raises():
    gspec = GridSpec(2, 2)
    grid, B = make_grid(50, gspec, M1009, seed=21)
    rng = np.random.default_rng(22)
    u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
    grid.load_vector(to_planes(u, M1009))
    # inject a stale message before running
    stale = Message(0, (0, 1), (0, 0), 99, to_planes([1] * grid.bs.block_rows, M1009))
    grid.transport.send(stale, M1009)
    with pytest.raises(GridProtocolError):
        run_iterations(grid, 1)


def test_determinism_of_runs():
    gspec = GridSpec(2, 4)
    out = []
    logs = []
    for _ in range(2):
        grid, B = make_grid(50, gspec, M1009, seed=23)
        rng = np.random.default_rng(24)
        u = [int(x) for x in rng.integers(0, 1009, size=B.ncols)]
        out.append(run_grid(grid, M1009, u, k=2))
        logs.append([(e.reduce.messages, e.reduce.bytes,
                      e.broadcast.messages, e.broadcast.bytes)
                     for e in grid.comm_log.entries])
    assert out[0] == out[1]
    assert logs[0] == logs[1]
