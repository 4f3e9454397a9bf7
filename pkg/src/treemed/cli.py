"""Command-line entry point: ``treemed run`` and ``treemed simulate``."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .composition import AlignmentError
from .models import SingularDesignError
from .pipeline import AnalysisError, InputError, RunConfig, emit, run
from .tree import NewickError, TreeValidationError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("treemed")

INPUT_ERRORS = (InputError, AlignmentError, NewickError, TreeValidationError, FileNotFoundError,
                pd.errors.ParserError, pd.errors.EmptyDataError, KeyError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treemed",
        description="Phylogeny-based mediation analysis of microbiome compositions.")
    parser.add_argument("--version", action="version", version=f"treemed {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="analyse one dataset")
    r.add_argument("--tree", required=True, help="Newick tree file")
    r.add_argument("--counts", required=True, help="TSV counts: sample_id then one column per taxon")
    r.add_argument("--meta", required=True, help="TSV metadata keyed by sample_id")
    r.add_argument("--treatment", required=True, help="treatment column")
    r.add_argument("--outcome", required=True, help="outcome column")
    r.add_argument("--outcome-type", required=True, choices=["continuous", "binary"])
    r.add_argument("--confounders", default="", help="comma-separated confounder columns")
    r.add_argument("--pvalue-mode", choices=["asymptotic", "permutation"], default=None,
                   help="default: permutation when n < 100, else asymptotic")
    r.add_argument("--pi-method", choices=["jincai", "storey"], default="jincai")
    r.add_argument("--fdr", type=float, default=0.1)
    r.add_argument("--pseudocount", type=float, default=0.5)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-perms", type=int, default=100_000)
    r.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="estimate type I error, power and FDR by simulation")
    s.add_argument("--design", required=True, help="TOML design file")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--replicates", type=int, default=None, help="override replicates per design")
    s.add_argument("--workers", type=int, default=1, help="worker processes")
    s.add_argument("--dump-pvalues", action="store_true",
                   help="also write per-replicate results (replicates.tsv)")
    return parser


def _cmd_run(args) -> int:
    config = RunConfig(
        tree_path=args.tree, counts_path=args.counts, meta_path=args.meta,
        treatment_col=args.treatment, outcome_col=args.outcome,
        confounder_cols=[c for c in args.confounders.split(",") if c],
        outcome_kind=args.outcome_type, pvalue_mode=args.pvalue_mode,
        pi_method=args.pi_method, fdr_q=args.fdr, pseudocount=args.pseudocount,
        seed=args.seed, max_perms=args.max_perms)
    report = run(config)
    paths = emit(report, args.out)
    pr = report.proportions
    print(f"global p = {report.global_p:.4g}  ({len(report.tested)} nodes tested, "
          f"{len(report.selected_nodes)} selected at FDR {config.fdr_q})")
    print(f"pi00 = {pr.pi00:.3f}  pi10 = {pr.pi10:.3f}  pi01 = {pr.pi01:.3f}")
    for p in paths.values():
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from dataclasses import replace

    from .simulate import evaluate, load_designs

    designs, basis = load_designs(args.design)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries, reps = [], []
    for d in designs:
        if args.replicates is not None:
            d = replace(d, replicates=args.replicates)
        log.info("simulating %s (%d replicates)", d.name, d.replicates)
        res = evaluate(d, basis_config=basis, workers=args.workers)
        summaries.append(res.summary)
        reps.append(res.per_replicate.assign(design=d.name))
    summary = pd.concat(summaries, ignore_index=True)
    summary.to_csv(out / "summary.tsv", sep="\t", index=False, float_format="%.6g")
    if args.dump_pvalues:
        pd.concat(reps, ignore_index=True).to_csv(out / "replicates.tsv", sep="\t", index=False)
    print(summary.to_string(index=False))
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    warnings.simplefilter("default")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_simulate(args)
    except INPUT_ERRORS as exc:
        print(f"treemed: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SingularDesignError as exc:
        print(f"treemed: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AnalysisError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"treemed: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"treemed: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
