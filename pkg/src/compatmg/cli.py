"""Command-line benchmark driver.

Examples
--------
Run the 2D square generalized Stokes benchmark at its defaults::

    compatmg --problem square-stokes

Reproduce the additive-smoother column at six levels as CSV::

    compatmg --problem square-stokes --levels 1..6 --smoother add --format csv

The environment variable COMPATMG_THREADS caps the compiled-kernel thread
count (the sweeps themselves are sequential by contract; the cap applies to
batched vendor kernels).  Exit status is 0 for a completed suite, including
rows that did not converge (reported as DNC), and nonzero on internal error.
"""

import argparse
import os
import sys

from .harness import CASE_NAMES, emit_table, make_case, run_case


def _parse_levels(spec):
    if ".." in spec:
        a, b = spec.split("..")
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError("empty level range")
        return tuple(range(lo, hi + 1))
    return (int(spec),)


def _parse_floats(spec):
    return tuple(float(tok) for tok in spec.split(",") if tok)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="compatmg",
        description="Divergence-conforming B-spline Stokes/Oseen multigrid benchmarks")
    parser.add_argument("--problem", required=True, choices=CASE_NAMES)
    parser.add_argument("--degree", type=int, default=2, metavar="P")
    parser.add_argument("--levels", type=_parse_levels, default=None,
                        metavar="A..B", help="finest-level range, e.g. 1..7")
    parser.add_argument("--da", type=_parse_floats, default=None, metavar="V[,V...]",
                        help="Damkohler numbers (columns)")
    parser.add_argument("--re", type=_parse_floats, default=None, metavar="V[,V...]",
                        help="Reynolds numbers (Oseen only)")
    parser.add_argument("--smoother", choices=("mult", "add"), default="mult")
    parser.add_argument("--eta", type=float, default=0.5,
                        help="additive smoother scaling factor")
    parser.add_argument("--nu1", type=int, default=1, help="pre-smoothing steps")
    parser.add_argument("--nu2", type=int, default=2, help="post-smoothing steps")
    parser.add_argument("--tol", type=float, default=1e-6,
                        help="relative residual reduction target")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed of the divergence-free random initial guess")
    parser.add_argument("--max-cycles", type=int, default=200)
    parser.add_argument("--format", choices=("text", "csv"), default="text")
    parser.add_argument("--dump-matrix", metavar="PATH", default=None,
                        help="write the first operator/load pair in Matrix Market format")
    parser.add_argument("--allow-large", action="store_true",
                        help="lift the desk-scale level caps")
    return parser


def _apply_thread_env():
    raw = os.environ.get("COMPATMG_THREADS")
    if not raw:
        return
    try:
        want = max(1, int(raw))
    except ValueError:
        return
    try:
        import numba
        numba.set_num_threads(min(want, numba.config.NUMBA_NUM_THREADS))
    except Exception:
        pass


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_thread_env()
    try:
        case = make_case(
            args.problem,
            levels=args.levels,
            da=args.da,
            re=args.re,
            degree=args.degree,
            smoother=args.smoother,
            eta=args.eta,
            nu1=args.nu1,
            nu2=args.nu2,
            tol=args.tol,
            seed=args.seed,
            max_cycles=args.max_cycles,
            allow_large=args.allow_large,
        )
    except ValueError as err:
        parser.error(str(err))
    record = run_case(case, dump_matrix=args.dump_matrix)
    sys.stdout.write(emit_table(record, fmt=args.format))
    return 0


if __name__ == "__main__":
    sys.exit(main())
