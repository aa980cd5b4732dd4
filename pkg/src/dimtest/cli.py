"""Command-line front end.

Subcommands cover the two workflows: ``simulate`` regenerates the built-in
Monte Carlo study grids, and ``fit`` / ``normalize`` / ``screen`` /
``analyze`` / ``scatter`` run the probe-set screening pipeline on matrix
files.  Exit codes: 0 success, 2 parse/format error, 3 precondition failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import ParseError, PreconditionError
from .screenflow import (
    AnalyzeConfig,
    analyze,
    emit_scatter,
    fit_records,
    load_dataset,
    quantile_normalize,
    save_dataset,
    screen,
)
from .simlab import reproduce_table

EXIT_PARSE = 2
EXIT_PRECONDITION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dimtest",
        description="Rank-2 fits and second-dimension tests for probe-set matrices.",
    )
    parser.add_argument("--version", action="version", version=f"dimtest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="recompute one of the built-in study grids")
    sim.add_argument("--table", type=int, required=True, choices=(1, 2, 3, 4))
    sim.add_argument("--reps", type=int, default=5000, help="replicates per cell")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--bootstrap-B", type=int, default=1000, dest="bootstrap_B",
                     help="bootstrap resamples per replicate (table 3)")
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--out", type=Path, default=None, help="output TSV (default stdout)")
    sim.add_argument("--quiet", action="store_true", help="suppress per-cell progress")

    def add_matrix_args(p, with_groups=False):
        p.add_argument("matrix", type=Path, help="probe-set matrix TSV")
        p.add_argument("--orientation", choices=("probes-as-rows", "arrays-as-rows"),
                       default="probes-as-rows")
        p.add_argument("--no-normalize", action="store_true",
                       help="skip quantile normalization")
        if with_groups:
            p.add_argument("--groups", type=Path, required=with_groups == "required",
                           help="array metadata TSV (array_id, group)")

    fit_p = sub.add_parser("fit", help="fit every probe set and report its spectrum")
    add_matrix_args(fit_p)
    fit_p.add_argument("--out", type=Path, default=None)

    norm_p = sub.add_parser("normalize", help="quantile-normalize across arrays")
    add_matrix_args(norm_p)
    norm_p.add_argument("--out", type=Path, required=True)

    screen_p = sub.add_parser("screen", help="keep probe sets with a strong second dimension")
    add_matrix_args(screen_p)
    screen_p.add_argument("--ratio", type=float, default=0.1,
                          help="minimum lambda2^2/lambda1^2")
    screen_p.add_argument("--top", type=int, default=None, help="keep at most this many")
    screen_p.add_argument("--out", type=Path, default=None)

    an_p = sub.add_parser("analyze", help="screen, test each survivor, and adjust the family")
    add_matrix_args(an_p, with_groups="required")
    an_p.add_argument("--test", choices=("target", "chisq", "max"), default="target")
    an_p.add_argument("--contrast", action="append", default=None,
                      help="comma-separated group-level contrast (repeatable, chisq)")
    an_p.add_argument("--estimator", choices=("median", "mean"), default="median")
    an_p.add_argument("--ratio", type=float, default=0.1)
    an_p.add_argument("--top", type=int, default=None)
    an_p.add_argument("--bootstrap", type=int, default=None, metavar="B",
                      help="bootstrap resamples (calibrated p-values)")
    an_p.add_argument("--seed", type=int, default=0)
    an_p.add_argument("--alpha", type=float, default=0.05)
    an_p.add_argument("--out", type=Path, required=True)

    sc_p = sub.add_parser("scatter", help="emit theta/phi scatter coordinates for one probe set")
    add_matrix_args(sc_p, with_groups=True)
    sc_p.add_argument("--id", required=True, dest="probeset_id")
    sc_p.add_argument("--out-dir", type=Path, required=True)

    return parser


def _load(args, need_groups=False):
    meta = getattr(args, "groups", None)
    records, groups = load_dataset(args.matrix, meta, orientation=args.orientation)
    if need_groups and groups is None:
        raise PreconditionError("this command needs --groups metadata")
    if not args.no_normalize:
        records = quantile_normalize(records)
    return records, groups


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _cmd_simulate(args) -> int:
    progress = None
    if not args.quiet:
        def progress(i, res):
            print(
                f"[{i}] n={res.n} {res.error_dist} {res.hypothesis} {res.method}: "
                f"{res.rejection_rate:.4f} (se {res.mc_stderr:.4f})",
                file=sys.stderr,
            )
    table = reproduce_table(
        args.table,
        reps=args.reps,
        seed=args.seed,
        bootstrap_B=args.bootstrap_B,
        alpha=args.alpha,
        progress=progress,
    )
    _emit(table.to_tsv(), args.out)
    return 0


def _cmd_fit(args) -> int:
    records, _ = _load(args)
    records = fit_records(records)
    lines = ["\t".join(
        ("probeset_id", "n", "m", "lambda1", "lambda2", "lambda3", "lambda4",
         "ratio", "sigma2_hat", "resid_sigma2", "notes")
    )]
    for rec in records:
        if rec.fit is None:
            lines.append("\t".join([rec.probeset_id] + [""] * 9 + ["; ".join(rec.notes)]))
            continue
        lam = list(rec.fit.lambdas[:4]) + [None] * max(0, 4 - rec.fit.m)
        cells = [rec.probeset_id, str(rec.matrix.n), str(rec.matrix.m)]
        cells += ["" if v is None else f"{v:.6g}" for v in lam]
        cells += [f"{rec.ratio:.6g}", f"{rec.fit.sigma2_hat:.6g}", f"{rec.fit.resid_sigma2:.6g}"]
        cells.append("; ".join(rec.notes))
        lines.append("\t".join(cells))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_normalize(args) -> int:
    records, _ = _load(args)
    save_dataset(records, args.out, orientation=args.orientation)
    return 0


def _cmd_screen(args) -> int:
    records, _ = _load(args)
    kept = screen(records, ratio_threshold=args.ratio, top_n=args.top)
    lines = ["\t".join(("probeset_id", "ratio", "lambda1", "lambda2"))]
    for rec in kept:
        lines.append(
            f"{rec.probeset_id}\t{rec.ratio:.6g}\t{rec.fit.lambdas[0]:.6g}\t{rec.fit.lambdas[1]:.6g}"
        )
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_analyze(args) -> int:
    records, groups = _load(args, need_groups=True)
    kept = screen(records, ratio_threshold=args.ratio, top_n=args.top)
    contrasts = None
    if args.contrast:
        try:
            contrasts = tuple(tuple(float(tok) for tok in c.split(",")) for c in args.contrast)
        except ValueError:
            raise ParseError(f"malformed contrast {args.contrast!r}") from None
    config = AnalyzeConfig(
        test=args.test,
        contrasts=contrasts,
        estimator=args.estimator,
        bootstrap_B=args.bootstrap,
        seed=args.seed,
        alpha=args.alpha,
    )
    report = analyze(kept, groups, config)
    report.save(args.out)
    n_tested = report.bh_family_size
    n_selected = sum(1 for row in report.rows if row.selected)
    n_raw = sum(1 for row in report.rows if row.p_value is not None and row.p_value < args.alpha)
    print(
        f"screened {len(kept)} probe sets; tested {n_tested}; "
        f"{n_raw} significant at alpha={args.alpha}; {n_selected} after adjustment",
        file=sys.stderr,
    )
    return 0


def _cmd_scatter(args) -> int:
    records, groups = _load(args)
    match = [rec for rec in records if rec.probeset_id == args.probeset_id]
    if not match:
        raise PreconditionError(f"probe set {args.probeset_id!r} not found")
    rec = fit_records(match)[0]
    arrays_path, probes_path = emit_scatter(rec, args.out_dir, groups=groups)
    print(f"wrote {arrays_path} and {probes_path}", file=sys.stderr)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "normalize": _cmd_normalize,
    "screen": _cmd_screen,
    "analyze": _cmd_analyze,
    "scatter": _cmd_scatter,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (PreconditionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
