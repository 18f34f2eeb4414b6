"""End-to-end CLI flows, exit codes, config files, and atomic writes."""

import json
import os

import numpy as np
import pytest

from sldlag import cli
from sldlag.balance import GridSpec
from sldlag.corpus import CorpusProfile, generate
from sldlag.modring import PrimeModulus
from sldlag.solver import BlockingParams
from sldlag.spmatrix import load_matrix, load_vector, spmv_sequential, store_matrix

M64 = PrimeModulus(2**61 - 1)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def matrix_file(tmp_path):
    p = tmp_path / "a.sldm"
    A = generate(CorpusProfile(n=200, gamma=6, seed=1), M64)
    store_matrix(A, p)
    return p


def test_gen_stats_roundtrip(tmp_path, capsys):
    out = tmp_path / "g.sldm"
    assert run("gen", "--n", 200, "--seed", 2, "--ell-bits", 64,
               "--gamma", 6, "--out", out) == 0
    A = load_matrix(out)
    assert A.nrows == 200
    assert run("stats", "--in", out, "--format", "json") == 0
    rec = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert rec["n"] == 200
    # determinism: same command, byte-identical file
    out2 = tmp_path / "g2.sldm"
    assert run("gen", "--n", 200, "--seed", 2, "--ell-bits", 64,
               "--gamma", 6, "--out", out2) == 0
    assert out.read_bytes() == out2.read_bytes()


def test_full_pipeline_via_cli(tmp_path, matrix_file, capsys):
    red = tmp_path / "red.sldm"
    tr = tmp_path / "t.sldt"
    assert run("sge", "--in", matrix_file, "--out", red, "--transcript", tr) == 0
    assert run("balance", "--in", matrix_file, "--grid", "2x2",
               "--out-dir", tmp_path / "blocks", "--perm", tmp_path / "p.sldp") == 0
    w_out = tmp_path / "w.sldv"
    assert run("solve", "--in", matrix_file, "--out", w_out, "--n", 2,
               "--m", 4, "--grid", "2x2", "--seed", 5) == 0
    assert run("verify", "--matrix", matrix_file, "--vector", w_out) == 0
    assert "KERNEL OK" in capsys.readouterr().out
    # the vector really is a kernel vector of the original matrix
    A = load_matrix(matrix_file)
    w, _ = load_vector(w_out)
    assert any(w) and spmv_sequential(A, w) == [0] * A.nrows


def test_solve_identity_exits_1(tmp_path, capsys):
    from sldlag.spmatrix import SparseMatrix
    I = SparseMatrix.from_rows(M64, 40, 40, [[(i, 1)] for i in range(40)])
    p = tmp_path / "i.sldm"
    store_matrix(I, p)
    code = run("solve", "--in", p, "--out", tmp_path / "w.sldv", "--seed", 1)
    assert code == 1


def test_verify_rejects_wrong_vector(tmp_path, matrix_file):
    from sldlag.spmatrix import store_vector
    rng = np.random.default_rng(3)
    bad = M64.random_residues(rng, 200)
    v = tmp_path / "bad.sldv"
    store_vector(bad, M64, v)
    assert run("verify", "--matrix", matrix_file, "--vector", v) == 1


def test_missing_file_exits_3(tmp_path):
    assert run("stats", "--in", tmp_path / "nope.sldm") == 3


def test_bad_format_exits_3(tmp_path):
    p = tmp_path / "junk.sldm"
    p.write_bytes(b"JUNKJUNKJUNK")
    assert run("stats", "--in", p) == 3


def test_estimate_reference_row(capsys):
    assert run("estimate", "--n-rows", 3602667, "--blocking", "4,8",
               "--t-compute", 142, "--t-comm", 27) == 0
    out = capsys.readouterr().out
    assert "16%" in out
    assert "4.4 days" in out or "4.5 days" in out


def test_estimate_csv(capsys):
    assert run("estimate", "--n-rows", 7287476, "--blocking", "12,24",
               "--t-compute", 1700, "--t-comm", 400, "--format", "csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "phase,iterations,seconds,days"
    krylov = lines[1].split(",")
    assert abs(float(krylov[3]) - 22) / 22 < 0.05


def test_config_file_defaults_and_flag_override(tmp_path, matrix_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n=2\nm=4\ngrid=2x2\nseed=5\n")
    w1 = tmp_path / "w1.sldv"
    assert run("solve", "--in", matrix_file, "--out", w1, "--config", cfg) == 0
    # same config, same seed: byte-identical output
    w2 = tmp_path / "w2.sldv"
    assert run("solve", "--in", matrix_file, "--out", w2, "--config", cfg) == 0
    assert w1.read_bytes() == w2.read_bytes()
    # an explicit flag overrides the file
    w3 = tmp_path / "w3.sldv"
    assert run("solve", "--in", matrix_file, "--out", w3, "--config", cfg,
               "--seed", 6) == 0
    assert w3.read_bytes() != w1.read_bytes()


def test_halt_and_resume_cli(tmp_path, matrix_file):
    ck = tmp_path / "ck"
    w_ref = tmp_path / "ref.sldv"
    assert run("solve", "--in", matrix_file, "--out", w_ref, "--n", 2,
               "--m", 4, "--seed", 7) == 0
    w_out = tmp_path / "w.sldv"
    assert run("solve", "--in", matrix_file, "--out", w_out, "--n", 2,
               "--m", 4, "--seed", 7, "--checkpoint-dir", ck,
               "--checkpoint-every", 16, "--halt-after", 50) == 0
    assert not w_out.exists()  # halted before finishing
    assert (ck / "meta.txt").exists()
    assert run("solve", "--in", matrix_file, "--out", w_out, "--n", 2,
               "--m", 4, "--seed", 7, "--checkpoint-dir", ck,
               "--checkpoint-every", 16) == 0
    assert w_out.read_bytes() == w_ref.read_bytes()


def test_bench_spmv_and_jsonl(tmp_path, matrix_file):
    log = tmp_path / "bench.jsonl"
    assert run("bench-spmv", "--in", matrix_file, "--grid", "2x2",
               "--iters", 4, "--log-jsonl", log) == 0
    records = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(records) == 4
    assert all("comm_bytes" in r and "spmv_ms" in r for r in records)


def test_no_tmp_leftovers(tmp_path, matrix_file):
    w_out = tmp_path / "w.sldv"
    assert run("solve", "--in", matrix_file, "--out", w_out, "--seed", 9) == 0
    leftovers = [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]
    assert leftovers == []
