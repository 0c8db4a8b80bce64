"""Command-line front end.

Subcommands: ``gen-matrix``, ``factorize``, ``svd``, ``compress-image``,
``compare`` and ``sweep``.  Tolerances given with ``--tol`` are relative to
``||A||_F``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 tolerance below the
error-indicator floor, 5 tolerance not reached (sketch exhausted).
"""
from __future__ import annotations

import argparse
import logging
import sys
from types import SimpleNamespace

from .io import (
    UnsupportedFormatError,
    read_image_pgm_ppm,
    read_matrix_market,
    write_image_pgm_ppm,
    write_matrix_market,
)
from .kernel import MatrixHandle, RowStream, frob_norm_sq
from .matgen import SpectrumSpec, sparse_random, synthesize
from .qb import (
    StopRule,
    Termination,
    ToleranceBelowFloorError,
    adaptive_range_finder,
    rand_qb,
    rand_qb_b,
    rand_qb_ei,
    rand_qb_fp,
    rand_qb_fp_fixed_rank,
    single_pass_fp,
    single_pass_hmt,
)
from .report import emit_report, measure
from .spectral import qb_to_svd

log = logging.getLogger("randqb")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FLOOR, EXIT_EXHAUSTED = 0, 2, 3, 4, 5

ALGORITHMS = ("qb", "qb_b", "qb_ei", "qb_fp", "single_pass", "hmt", "range_finder")
POWER_ALGORITHMS = frozenset({"qb", "qb_ei", "qb_fp"})

KIND_ALIASES = {
    "matrix1": "inv_square", "inv2": "inv_square", "inv_square": "inv_square",
    "matrix2": "exp7", "exp7": "exp7",
    "matrix3": "s_shape", "sshape": "s_shape", "s_shape": "s_shape",
}


class UsageError(Exception):
    pass


def spectrum_for(kind: str, n: int) -> SpectrumSpec:
    """``matrix1|inv2``, ``matrix2|exp7``, ``matrix3|sshape`` or ``exp:TAU``."""
    if kind.startswith("exp:"):
        try:
            tau = float(kind[4:])
        except ValueError:
            raise UsageError(f"bad decay constant in {kind!r}") from None
        return SpectrumSpec("exp_decay", n, tau=tau)
    key = KIND_ALIASES.get(kind)
    if key is None:
        raise UsageError(f"unknown matrix kind {kind!r}")
    if key == "exp7":
        return SpectrumSpec.matrix2(n)
    return SpectrumSpec(key, n)


def run_algorithm(alg, A, rank=None, oversample=0, tol=None, block=10, power=0, budget=None, seed=0):
    """Dispatch one factorization; ``tol`` is relative, ``rank`` excludes oversampling."""
    if rank is not None and rank <= 0:
        rank = None
    if (rank is None) == (tol is None):
        raise UsageError("give exactly one of --rank (positive) and --tol")
    l = None if rank is None else rank + oversample
    if alg == "qb":
        if l is None:
            raise UsageError("qb is fixed-rank only; use --rank")
        return rand_qb(A, l, power, rng=seed)
    if alg in ("qb_b", "qb_ei"):
        stop = StopRule.fixed_rank(rank, oversample) if l else StopRule.fixed_precision(tol, relative=True)
        if alg == "qb_b":
            if power:
                raise UsageError("qb_b has no power scheme")
            return rand_qb_b(A, stop, block, rng=seed)
        return rand_qb_ei(A, stop, block, power, rng=seed)
    if alg == "qb_fp":
        if l is not None:
            return rand_qb_fp_fixed_rank(A, rank, oversample, block, rng=seed, P=power)
        return rand_qb_fp(A, tol, block, power, budget, rng=seed, relative=True)
    if alg == "single_pass":
        if power:
            raise UsageError("single_pass reads A once; --power must be 0")
        stream = MatrixHandle(RowStream.from_matrix(A.data), counter=A.counter)
        if l is not None:
            return single_pass_fp(stream, l, block, rng=seed)
        m, n = A.shape
        cap = min(m, n, budget or 50 * block)
        return single_pass_fp(stream, cap, block, rng=seed, tol=tol, relative=True)
    if alg == "hmt":
        if l is None:
            raise UsageError("hmt is fixed-rank only; use --rank")
        stream = MatrixHandle(RowStream.from_matrix(A.data), counter=A.counter)
        return single_pass_hmt(stream, l, rng=seed)
    if alg == "range_finder":
        if tol is None:
            raise UsageError("range_finder is fixed-precision only; use --tol")
        return adaptive_range_finder(A, tol, rng=seed, relative=True)
    raise UsageError(f"unknown algorithm {alg!r}; choose from {', '.join(ALGORITHMS)}")


def _measured(alg, A, args, rank=None, power=None):
    rank = args.rank if rank is None else rank
    power = args.power if power is None else power
    params = {"tol": args.tol, "block": args.block, "power": power}
    fro2 = frob_norm_sq(A.data)
    A = MatrixHandle(A.data)
    return measure(alg, lambda: run_algorithm(alg, A, rank, args.oversample, args.tol, args.block,
                                              power, args.budget, args.seed),
                   A, params, fro2)


def _load(path) -> MatrixHandle:
    try:
        return read_matrix_market(path)
    except (OSError, UnsupportedFormatError) as exc:
        raise IOError(str(exc)) from exc


def _tolerance_outcome(f, report, tol):
    if tol is None:
        return EXIT_OK
    term = getattr(f, "terminated_by", None)
    if term is Termination.SKETCH_EXHAUSTED or not report.achieved_relative_error < tol:
        log.error("tolerance %g not reached (error %.3e, %s)", tol, report.achieved_relative_error,
                  getattr(term, "value", term))
        return EXIT_EXHAUSTED
    return EXIT_OK


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_matrix(args):
    if args.kind == "sparse":
        M = sparse_random(args.n, args.density, rng=args.seed)
    else:
        M = synthesize(spectrum_for(args.kind, args.n), rng=args.seed).matrix
    write_matrix_market(M, args.out)
    return EXIT_OK


def cmd_factorize(args):
    A = _load(args.input)
    f, report = _measured(args.alg, A, args)
    qb = f.as_qb() if hasattr(f, "as_qb") else f
    if args.out:
        write_matrix_market(qb.Q, f"{args.out}.Q.mtx")
        write_matrix_market(qb.B, f"{args.out}.B.mtx")
    emit_report([report], args.report)
    log.info("%s: rank %d, relative error %.3e, %d passes, %s", args.alg, report.rank,
             report.achieved_relative_error, report.passes, report.terminated_by)
    return _tolerance_outcome(qb, report, args.tol)


def cmd_svd(args):
    Q = _load(f"{args.factors}.Q.mtx").toarray()
    B = _load(f"{args.factors}.B.mtx").toarray()
    f = SimpleNamespace(Q=Q, B=B)
    k = args.k if args.k is not None else Q.shape[1]
    if k > Q.shape[1]:
        raise UsageError(f"--k {k} exceeds the factorization rank {Q.shape[1]}")
    svd = qb_to_svd(f, k)
    write_matrix_market(svd.U, f"{args.out}.U.mtx")
    write_matrix_market(svd.S[:, None], f"{args.out}.S.mtx")
    write_matrix_market(svd.V, f"{args.out}.V.mtx")
    return EXIT_OK


def cmd_compress_image(args):
    try:
        M, channels = read_image_pgm_ppm(args.input)
    except (OSError, UnsupportedFormatError) as exc:
        raise IOError(str(exc)) from exc
    A = MatrixHandle(M)
    args.rank, args.oversample = None, 0
    f, report = _measured(args.alg, A, args)
    qb = f.as_qb() if hasattr(f, "as_qb") else f
    write_image_pgm_ppm(qb.Q @ qb.B, args.out, channels)
    if args.factors:
        write_matrix_market(qb.Q, f"{args.factors}.Q.mtx")
        write_matrix_market(qb.B, f"{args.factors}.B.mtx")
    emit_report([report], args.report)
    m, n = M.shape
    log.info("image %dx%d -> rank %d (%.1fx fewer numbers), relative error %.4f", m, n, qb.rank,
             m * n / max(qb.rank * (m + n), 1), report.achieved_relative_error)
    return _tolerance_outcome(qb, report, args.tol)


def cmd_compare(args):
    A = _load(args.input)
    reports = []
    for alg in args.algs.split(","):
        alg = alg.strip()
        if alg not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {alg!r}")
        # --power applies only to the algorithms that have a power scheme
        power = args.power if alg in POWER_ALGORITHMS else 0
        reports.append(_measured(alg, A, args, power=power)[1])
    emit_report(reports, args.report)
    return EXIT_OK


def _parse_values(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values needs comma-separated integers, got {text!r}") from None


def cmd_sweep(args):
    values = _parse_values(args.values) if args.values else list(range(args.start, args.stop + 1, args.step))
    if not values:
        raise UsageError("empty sweep")
    reports = []
    if args.vary == "l":
        if args.input:
            A = _load(args.input)
        elif args.kind:
            A = MatrixHandle(synthesize(spectrum_for(args.kind, args.n), rng=args.matrix_seed).matrix)
        else:
            raise UsageError("sweep needs --in or --kind/--n")
        for l in values:
            reports.append(_measured(args.alg, A, args, rank=l)[1])
    else:
        if not args.kind:
            raise UsageError("--vary n needs --kind")
        for n in values:
            A = MatrixHandle(synthesize(spectrum_for(args.kind, n), rng=args.matrix_seed).matrix)
            reports.append(_measured(args.alg, A, args)[1])
    emit_report(reports, args.report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _algo_options(p, default_alg="qb_ei", with_alg=True):
    if with_alg:
        p.add_argument("--alg", default=default_alg, choices=ALGORITHMS)
    p.add_argument("--rank", type=int, default=None, help="target rank k (0 = unset)")
    p.add_argument("--oversample", type=int, default=10, help="oversampling s for fixed-rank runs")
    p.add_argument("--tol", type=float, default=None, help="relative Frobenius tolerance")
    p.add_argument("--block", type=int, default=10)
    p.add_argument("--power", type=int, default=0)
    p.add_argument("--budget", type=int, default=None, help="sketch columns for qb_fp (default 50*block)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="CSV report path ('-' or omitted: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randqb", description="Randomized QB factorization toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-matrix", help="write a synthetic test matrix (Matrix Market)")
    p.add_argument("--kind", required=True, help="matrix1|inv2, matrix2|exp7, matrix3|sshape, exp:TAU, sparse")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--density", type=float, default=0.003)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_matrix)

    p = sub.add_parser("factorize", help="compute a QB factorization of a Matrix Market file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None, help="prefix for PREFIX.Q.mtx / PREFIX.B.mtx")
    _algo_options(p)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("svd", help="truncated SVD from stored QB factors")
    p.add_argument("--factors", required=True, help="prefix given to factorize --out")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True, help="prefix for PREFIX.U/S/V.mtx")
    p.set_defaults(func=cmd_svd)

    p = sub.add_parser("compress-image", help="low-rank compression of a PGM/PPM image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="reconstructed image (PGM/PPM)")
    p.add_argument("--factors", default=None, help="optional prefix for the Q/B factors")
    p.add_argument("--alg", default="qb_ei", choices=("qb_b", "qb_ei", "qb_fp", "single_pass", "range_finder"))
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--block", type=int, default=10)
    p.add_argument("--power", type=int, default=1)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_compress_image)

    p = sub.add_parser("compare", help="run several algorithms on one input")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--algs", default="qb_b,qb_ei,qb_fp", help="comma-separated algorithm list")
    _algo_options(p, with_alg=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="error/time curves over the sketch size l or the dimension n")
    p.add_argument("--alg", default="qb", choices=ALGORITHMS)
    p.add_argument("--vary", choices=("l", "n"), default="l")
    p.add_argument("--values", default=None, help="comma-separated list")
    p.add_argument("--start", type=int, default=20)
    p.add_argument("--stop", type=int, default=200)
    p.add_argument("--step", type=int, default=20)
    p.add_argument("--in", dest="input", default=None)
    p.add_argument("--kind", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--matrix-seed", type=int, default=0)
    _algo_options(p, with_alg=False)
    p.set_defaults(func=cmd_sweep, oversample=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "command", None) == "sweep" and args.vary == "l":
        args.tol = None
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"randqb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ToleranceBelowFloorError as exc:
        print(f"randqb: error: {exc}", file=sys.stderr)
        return EXIT_FLOOR
    except (IOError, UnsupportedFormatError) as exc:
        print(f"randqb: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
