"""
Command-line entry point wiring the whole chain:
generate -> stats -> sge -> balance -> solve -> verify -> estimate.

Subcommands: gen, stats, sge, balance, solve, verify, estimate,
bench-spmv.  `solve` runs the full pipeline on a stored matrix (SGE
preprocessing, balancing, grid block Wiedemann, kernel lifting) and
writes a kernel vector of the ORIGINAL matrix.

Exit codes: 0 success; 1 solver failure after retries (including a
trivial kernel); 2 usage errors; 3 I/O or file-format errors.  Every
output file is written atomically.  A config file of key=value lines can
pre-fill any long option (flags override the file).  SLDLAG_CONTEXTS
caps concurrent column chains; 1 reproduces parallel results bit-exactly.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass

import gmpy2
import numpy as np

from . import balance, corpus, gridmv, perfmodel, sge, solver, spmatrix
from .checkpoint import CheckpointManager, HaltRequested
from .fileio import FormatError
from .modring import PrimeModulus

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2
EXIT_IO = 3


class TrivialKernel(RuntimeError):
    """The system admits only the zero vector (e.g. SGE emptied it)."""


@dataclass
class PipelineResult:
    w: list
    stats: dict


def pipeline(A, bp: solver.BlockingParams, grid: balance.GridSpec, seed: int,
             transport: str = "channel", run_sge: bool = True,
             sge_opts: dict | None = None, checkpoint_dir=None,
             checkpoint_every: int = 2**14, halt_after: int | None = None,
             x_mode: str = "unit", margin: int = solver.SAFETY_MARGIN,
             contexts=None, jsonl=None) -> PipelineResult:
    """SGE -> balance/split -> grid block Wiedemann -> lift -> verify.

    Returns a verified kernel vector of the ORIGINAL matrix plus stage
    timings and communication totals.
    """
    mod = A.mod
    stats = {"n": A.nrows, "nnz": A.nnz}
    t0 = time.monotonic()

    if run_sge:
        red, transcript = sge.sge_reduce(A, **(sge_opts or {}))
    else:
        red, transcript = A, None
    stats["sge_seconds"] = time.monotonic() - t0
    stats["reduced_shape"] = (red.nrows, red.ncols)
    _emit(jsonl, stage="sge", seconds=stats["sge_seconds"],
          rows=red.nrows, cols=red.ncols, nnz=red.nnz)

    if red.total_cols == 0:
        raise TrivialKernel("reduction emptied the system; kernel is trivial")
    if red.nrows == 0:
        # no constraints left: any surviving coordinate works
        w_red = [0] * red.total_cols
        w_red[0] = 1
        w = sge.lift_kernel(transcript, w_red) if transcript else w_red
        assert solver.verify_kernel(A, w)
        stats["total_seconds"] = time.monotonic() - t0
        return PipelineResult(w, stats)

    # square the reduced system: when dropped zero columns outnumber the
    # removed rows, virtual zero columns are appended; their coordinates
    # are discarded before lifting (they carry no information)
    ncols_real = red.total_cols
    deficit = red.nrows - ncols_real
    if deficit < 0:
        raise TrivialKernel("reduced system is wider than tall; unsupported")
    solve_A = red
    if deficit:
        assert not red.dense_cols  # reduction re-encodes dense columns
        solve_A = spmatrix.SparseMatrix(
            red.mod, red.nrows, red.ncols + deficit, red.row_ptr, red.col_idx,
            red.tags, red.small_vals, red.full_vals, [], validate=False,
        )

    t1 = time.monotonic()
    p = balance.balance_permutation(solve_A, grid)
    bs = balance.split(solve_A, p, grid)
    B_size = bs.n_padded
    stats["balance_seconds"] = time.monotonic() - t1
    stats["imbalance"] = balance.imbalance(bs) if solve_A.nnz else 1.0
    _emit(jsonl, stage="balance", seconds=stats["balance_seconds"],
          grid=str(grid), padded=B_size, imbalance=stats["imbalance"])

    grids = []

    def make_mul(j):
        g = gridmv.Grid(bs, mod, transport=transport)
        grids.append(g)
        return solver.GridMultiplier(g)

    forced_zero = range(solve_A.nrows, B_size)
    ck = None
    if checkpoint_dir is not None:
        ck = CheckpointManager(checkpoint_dir, mod, every=checkpoint_every,
                               halt_after=halt_after)

    t2 = time.monotonic()
    kv, solve_stats = solver.block_wiedemann(
        None, bp, seed, make_mul=make_mul, margin=margin, x_mode=x_mode,
        forced_zero=forced_zero, checkpoint=ck, contexts=contexts,
    )
    stats["solve_seconds"] = time.monotonic() - t2
    stats.update(solve_stats)
    comm_bytes = sum(g.comm_log.total_bytes() for g in grids)
    comm_msgs = sum(g.comm_log.total_messages() for g in grids)
    spmvs = sum(g.spmv_count for g in grids)
    stats["comm_bytes"] = comm_bytes
    stats["comm_messages"] = comm_msgs
    stats["grid_spmvs"] = spmvs
    _emit(jsonl, stage="solve", seconds=stats["solve_seconds"],
          spmvs=spmvs, comm_bytes=comm_bytes,
          attempt=solve_stats["attempt"])

    # back through the permutation, drop padding and virtual columns
    w_sq = [0] * solve_A.total_cols
    for j in range(solve_A.total_cols):
        w_sq[j] = kv.w[p.col_perm[j]]
    w_red = w_sq[:ncols_real]
    if not any(w_red):
        raise solver.SolverFailure(
            "kernel vector is supported only on virtual columns"
        )
    w = sge.lift_kernel(transcript, w_red) if transcript else w_red
    if not solver.verify_kernel(A, w):
        raise solver.SolverFailure("lifted vector failed final verification")
    stats["total_seconds"] = time.monotonic() - t0
    _emit(jsonl, stage="done", seconds=stats["total_seconds"])
    return PipelineResult(w, stats)


def _emit(jsonl, **record):
    if jsonl is not None:
        jsonl.write(json.dumps(record) + "\n")
        jsonl.flush()


# -- argument plumbing -----------------------------------------------------------


def _read_config(path):
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            k, _, v = line.partition("=")
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(raw: str):
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw


def _apply_config(args, parser_defaults):
    if not getattr(args, "config", None):
        return args
    cfg = _read_config(args.config)
    for key, raw in cfg.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) != parser_defaults.get(key):
            continue  # flag given explicitly: flags override the file
        setattr(args, key, _coerce(raw))
    return args


def random_prime(bits: int, rng) -> PrimeModulus:
    """Deterministic probable prime of exactly `bits` bits from the RNG."""
    lo = 1 << (bits - 1)
    while True:
        chunks = rng.integers(0, 2**32, size=(bits + 95) // 32, dtype=np.uint64)
        x = 0
        for c in chunks.tolist():
            x = (x << 32) | int(c)
        p = int(gmpy2.next_prime(lo + x % lo))
        if p.bit_length() == bits:
            return PrimeModulus(p)


def _modulus_from_args(args, rng) -> PrimeModulus:
    if getattr(args, "ell_hex", None):
        return PrimeModulus(int(args.ell_hex, 16))
    return random_prime(args.ell_bits, rng)


def _profile_from_args(args) -> corpus.CorpusProfile:
    base = corpus.profile_ffs() if args.profile == "ffs" else corpus.profile_nfs()
    return corpus.CorpusProfile(
        n=args.n,
        gamma=args.gamma if args.gamma is not None else base.gamma,
        pm1_fraction=args.pm1 if args.pm1 is not None else base.pm1_fraction,
        density_decay=args.decay,
        dense_cols=args.dense_cols if args.dense_cols is not None else base.dense_cols,
        planted_kernel_cols=args.planted,
        seed=args.seed,
    )


# -- subcommands -------------------------------------------------------------------


def cmd_gen(args):
    rng = np.random.default_rng(args.seed)
    mod = _modulus_from_args(args, rng)
    prof = _profile_from_args(args)
    A = corpus.generate(prof, mod)
    spmatrix.store_matrix(A, args.out)
    s = spmatrix.matrix_stats(A)
    print(f"wrote {args.out}: n={s.n} nnz={s.nnz} gamma={s.avg_row_weight:.1f} "
          f"pm1={s.pm1_fraction:.3f} ell={mod.bit_length} bits")
    return EXIT_OK


def cmd_stats(args):
    A = spmatrix.load_matrix(args.inp)
    s = spmatrix.matrix_stats(A)
    if args.format == "json":
        print(json.dumps({
            "n": s.n, "nnz": s.nnz, "avg_row_weight": s.avg_row_weight,
            "row_weight_stddev": s.row_weight_stddev,
            "pm1_fraction": s.pm1_fraction,
            "projected_cost": sge.projected_cost(A),
        }))
    else:
        print(f"n                {s.n}")
        print(f"nnz              {s.nnz}")
        print(f"avg row weight   {s.avg_row_weight:.3f}")
        print(f"row weight sd    {s.row_weight_stddev:.3f}")
        print(f"pm1 fraction     {s.pm1_fraction:.4f}")
        print(f"projected cost   {sge.projected_cost(A)}")
    return EXIT_OK


def cmd_sge(args):
    A = spmatrix.load_matrix(args.inp)
    red, t = sge.sge_reduce(
        A, max_fill_row_weight=args.max_fill,
        memory_budget_bytes=args.memory_budget,
    )
    spmatrix.store_matrix(red, args.out)
    sge.store_transcript(t, args.transcript)
    print(f"{A.nrows}x{A.total_cols} (nnz {A.nnz}) -> "
          f"{red.nrows}x{red.total_cols} (nnz {red.nnz}), "
          f"{len(t.steps)} steps; projected cost "
          f"{sge.projected_cost(A)} -> {sge.projected_cost(red)}")
    return EXIT_OK


def cmd_balance(args):
    import os
    A = spmatrix.load_matrix(args.inp)
    g = balance.GridSpec.parse(args.grid)
    p = balance.balance_permutation(A, g)
    balance.store_permutation(p, args.perm)
    bs = balance.split(A, p, g)
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(g.r):
        for j in range(g.c):
            spmatrix.store_matrix(
                bs.blocks[i][j], f"{args.out_dir}/block_{i}_{j}.sldm"
            )
    print(f"split {bs.n_padded}x{bs.n_padded} over {g}: "
          f"imbalance {balance.imbalance(bs):.4f}")
    return EXIT_OK


def cmd_solve(args):
    A = spmatrix.load_matrix(args.inp)
    bp = (solver.BlockingParams(1, 1) if args.algo == "wiedemann"
          else solver.BlockingParams(args.n, args.m))
    g = balance.GridSpec.parse(args.grid)
    jsonl = open(args.log_jsonl, "w") if args.log_jsonl else None
    try:
        res = pipeline(
            A, bp, g, seed=args.seed, transport=args.transport,
            run_sge=not args.no_sge, checkpoint_dir=args.checkpoint_dir,
            checkpoint_every=args.checkpoint_every, halt_after=args.halt_after,
            x_mode=args.x_mode, jsonl=jsonl,
        )
    except HaltRequested as e:
        print(f"HALTED: {e}")
        return EXIT_OK
    finally:
        if jsonl:
            jsonl.close()
    spmatrix.store_vector(res.w, A.mod, args.out)
    st = res.stats
    print(f"kernel vector written to {args.out}")
    print(f"stages: sge {st['sge_seconds']:.2f}s, "
          f"balance {st['balance_seconds']:.2f}s, "
          f"solve {st['solve_seconds']:.2f}s "
          f"(grid spmvs {st.get('grid_spmvs', 0)}, "
          f"comm {st.get('comm_bytes', 0)} bytes)")
    return EXIT_OK


def cmd_verify(args):
    A = spmatrix.load_matrix(args.matrix)
    w, mod = spmatrix.load_vector(args.vector)
    if mod != A.mod:
        print("KERNEL FAIL: modulus mismatch")
        return EXIT_SOLVER
    if solver.verify_kernel(A, w):
        print("KERNEL OK")
        return EXIT_OK
    print("KERNEL FAIL")
    return EXIT_SOLVER


def cmd_estimate(args):
    n, m = (int(x) for x in args.blocking.split(","))
    bp = solver.BlockingParams(n, m)
    cal = perfmodel.CalibrationParams(
        t_iter_compute=args.t_compute / 1000.0,
        t_iter_comm=args.t_comm / 1000.0,
    )
    est = perfmodel.estimate(args.n_rows, bp, cal,
                             lingen_seconds=args.lingen_hours * 3600.0)
    if args.format == "csv":
        print("phase,iterations,seconds,days")
        print(f"krylov,{est.krylov_iterations},{est.krylov_seconds:.0f},"
              f"{est.krylov_days:.2g}")
        print(f"mksol,{est.mksol_iterations},{est.mksol_seconds:.0f},"
              f"{est.mksol_days:.2g}")
        print(f"lingen,,{est.lingen_seconds:.0f},"
              f"{est.lingen_seconds / 86400:.2g}")
        print(f"total,,{est.total_seconds + est.lingen_seconds:.0f},"
              f"{(est.total_seconds + est.lingen_seconds) / 86400:.2g}")
        print(f"comm_ratio,,,{est.comm_ratio:.3f}")
    else:
        print(f"krylov     {est.krylov_iterations} iterations, "
              f"{est.krylov_days:.2g} days")
        print(f"mksol      {est.mksol_iterations} iterations, "
              f"{est.mksol_days:.2g} days")
        if est.lingen_seconds:
            print(f"lingen     {est.lingen_seconds / 86400:.2g} days (given)")
        print(f"total      {(est.total_seconds + est.lingen_seconds) / 86400:.2g} days")
        print(f"comm ratio {100 * est.comm_ratio:.0f}%")
    return EXIT_OK


def cmd_bench_spmv(args):
    A = spmatrix.load_matrix(args.inp)
    g = balance.GridSpec.parse(args.grid)
    p = balance.balance_permutation(A, g)
    bs = balance.split(A, p, g)
    grid = gridmv.Grid(bs, A.mod, transport=args.transport)
    rng = np.random.default_rng(args.seed)
    from . import vecops
    u = A.mod.random_residues(rng, bs.n_padded)
    grid.load_vector(vecops.ints_to_planes(u, vecops.digit_count(A.mod.ell)))
    jsonl = open(args.log_jsonl, "w") if args.log_jsonl else None
    t0 = time.monotonic()
    for it in range(args.iters):
        t_iter = time.monotonic()
        grid.iterate(1)
        if jsonl:
            e = grid.comm_log.entries[-1]
            _emit(jsonl, iteration=it,
                  spmv_ms=1000 * (time.monotonic() - t_iter),
                  comm_bytes=e.total_bytes)
    elapsed = time.monotonic() - t0
    if jsonl:
        jsonl.close()
    per = elapsed / max(1, args.iters)
    log = grid.comm_log
    print(f"{args.iters} iterations on {g}: {1000 * per:.2f} ms/iter, "
          f"{log.total_bytes() // max(1, args.iters)} comm bytes/iter")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="sldlag",
        description="Exact sparse linear algebra modulo large primes: "
                    "kernel vectors by (block) Wiedemann on a node grid.",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus matrix")
    g.add_argument("--profile", choices=["ffs", "nfs"], default="ffs")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ell-bits", type=int, default=64)
    g.add_argument("--ell-hex", default=None)
    g.add_argument("--gamma", type=int, default=None)
    g.add_argument("--pm1", type=float, default=None)
    g.add_argument("--dense-cols", type=int, default=None)
    g.add_argument("--decay", type=float, default=0.5)
    g.add_argument("--planted", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("stats", help="matrix statistics")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--format", choices=["text", "json"], default="text")
    s.set_defaults(func=cmd_stats)

    e = sub.add_parser("sge", help="structured Gaussian elimination")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--transcript", required=True)
    e.add_argument("--memory-budget", type=int, default=None)
    e.add_argument("--max-fill", type=int, default=None)
    e.set_defaults(func=cmd_sge)

    b = sub.add_parser("balance", help="balancing permutation and block split")
    b.add_argument("--in", dest="inp", required=True)
    b.add_argument("--grid", required=True)
    b.add_argument("--out-dir", required=True)
    b.add_argument("--perm", required=True)
    b.set_defaults(func=cmd_balance)

    so = sub.add_parser("solve", help="full pipeline: kernel of a stored matrix")
    so.add_argument("--in", dest="inp", required=True)
    so.add_argument("--out", required=True)
    so.add_argument("--algo", choices=["wiedemann", "block"], default="block")
    so.add_argument("--n", type=int, default=2)
    so.add_argument("--m", type=int, default=4)
    so.add_argument("--grid", default="1x1")
    so.add_argument("--seed", type=int, default=0)
    so.add_argument("--transport", choices=["channel", "socket"],
                    default="channel")
    so.add_argument("--no-sge", action="store_true")
    so.add_argument("--x-mode", choices=["unit", "dense"], default="unit")
    so.add_argument("--checkpoint-dir", default=None)
    so.add_argument("--checkpoint-every", type=int, default=2**14)
    so.add_argument("--halt-after", type=int, default=None,
                    help="stop after this many Krylov steps (testing aid)")
    so.add_argument("--config", default=None)
    so.add_argument("--log-jsonl", default=None)
    so.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="check A w = 0 and w != 0")
    v.add_argument("--matrix", required=True)
    v.add_argument("--vector", required=True)
    v.set_defaults(func=cmd_verify)

    es = sub.add_parser("estimate", help="wall-clock estimate from constants")
    es.add_argument("--n-rows", type=int, required=True)
    es.add_argument("--blocking", required=True, help="n,m")
    es.add_argument("--t-compute", type=float, required=True, help="ms")
    es.add_argument("--t-comm", type=float, required=True, help="ms")
    es.add_argument("--lingen-hours", type=float, default=0.0)
    es.add_argument("--format", choices=["text", "csv"], default="text")
    es.set_defaults(func=cmd_estimate)

    be = sub.add_parser("bench-spmv", help="measure grid SpMV per-iteration cost")
    be.add_argument("--in", dest="inp", required=True)
    be.add_argument("--grid", default="1x1")
    be.add_argument("--transport", choices=["channel", "socket"],
                    default="channel")
    be.add_argument("--iters", type=int, default=16)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--log-jsonl", default=None)
    be.set_defaults(func=cmd_bench_spmv)

    ap.sub_map = {name: p for name, p in sub.choices.items()}
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    defaults = {
        a.dest: a.default for a in ap.sub_map[args.command]._actions
    }
    args = _apply_config(args, defaults)
    try:
        return args.func(args)
    except (TrivialKernel, solver.SolverFailure, solver.GeneratorFailure) as e:
        print(f"SOLVER FAILURE: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (FormatError, OSError) as e:
        print(f"IO ERROR: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"USAGE ERROR: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main(argv=None))
