"""Command-line entry point: ``belt simulate | complete | translate``.

Exit codes: 0 on success, 1 when the estimator fails (every replicate, an
uncoverable block, or every translation query), 2 for bad flags or
malformed input files.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from itertools import combinations
from pathlib import Path

import numpy as np

from . import baselines, simlab
from .core import complete
from .errors import BeltError, CompletionError, ValidationError
from .io import (
    ParseError,
    format_float,
    load_sources,
    read_embeddings,
    read_token_list,
    write_embeddings,
    write_triplets,
)
from .metrics import translate
from .spectral import coherence, condition_number, select_rank

logger = logging.getLogger("belt")

CSV_HEADER = [
    "setting", "method", "n", "rank", "m", "p0", "sigma", "replicate", "seed",
    "err_f", "err_2", "precision_at_5", "precision_at_10", "precision_at_20", "wall_ms",
]
CSV_PRECISION_KS = (5, 10, 20)
METHOD_CHOICES = ("belt", "smc", "pretrain")


class UsageError(Exception):
    pass


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format_float(x)


def metric_rows_to_csv(rows, fh, wall_time=False):
    """Write MetricRows in the fixed column order; NaN and missing values are empty."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            row.setting, row.method, row.n, row.rank, row.m, repr(float(row.p0)),
            repr(float(row.sigma)), row.replicate, row.seed,
            _num(row.err_f), _num(row.err_2),
            *(_num(row.precision_at.get(k)) for k in CSV_PRECISION_KS),
            _num(row.wall_ms) if wall_time else "",
        ])


def _methods(text):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHOD_CHOICES]
    if not methods or bad:
        raise argparse.ArgumentTypeError(
            f"invalid method {','.join(bad) or text!r}; choose from {', '.join(METHOD_CHOICES)}"
        )
    return methods


def _fraction(text):
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return value


def _dictionary(text):
    try:
        s, k, path = text.split(":", 2)
        return int(s) - 1, int(k) - 1, path
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected s:k:FILE, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="belt",
        description="Block-wise low-rank completion from overlapping noisy sources.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation setting and write metrics.csv")
    sim.add_argument("--setting", type=int, choices=(1, 2, 3), required=True)
    sim.add_argument("--n", type=int, default=2000, help="population size N")
    sim.add_argument("--rank", type=int, default=20)
    sim.add_argument("--m", type=int, default=2, help="number of sources")
    sim.add_argument("--p0", type=float, default=0.1)
    sim.add_argument("--sigma", type=float, default=0.1)
    sim.add_argument("--sigma-rule", choices=("linear", "constant"), default=None)
    sim.add_argument("--n-test", type=int, default=200, help="test vertices (setting 3)")
    sim.add_argument("--replicates", type=int, default=10)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--method", type=_methods, default=["belt"],
                     help="comma-separated subset of belt,smc,pretrain")
    sim.add_argument("--min-overlap", type=int, default=None,
                     help="smallest pairwise overlap BELT accepts (default: the rank)")
    sim.add_argument("--threads", type=int, default=None)
    sim.add_argument("--wall-time", action="store_true",
                     help="fill the wall_ms column (makes output run-dependent)")
    sim.add_argument("--out", type=Path, required=True)

    comp = sub.add_parser("complete", help="complete matrices read from triplet files")
    comp.add_argument("--sources", required=True, help="comma-separated triplet files")
    comp.add_argument("--vocab", required=True, help="comma-separated vocabulary files")
    rank = comp.add_mutually_exclusive_group(required=True)
    rank.add_argument("--rank", type=int)
    rank.add_argument("--rank-auto", type=_fraction, metavar="T",
                      help="smallest rank reaching this cumulative eigenvalue share")
    comp.add_argument("--dictionary", type=_dictionary, action="append", default=[],
                      metavar="s:k:FILE", help="token links between sources s and k (1-based)")
    comp.add_argument("--method", choices=METHOD_CHOICES, default="belt")
    comp.add_argument("--min-overlap", type=int, default=None)
    comp.add_argument("--threads", type=int, default=None)
    comp.add_argument("--out", type=Path, required=True)

    tr = sub.add_parser("translate", help="rank candidates by cosine similarity")
    tr.add_argument("--embeddings", type=Path, required=True)
    tr.add_argument("--queries", type=Path, required=True)
    tr.add_argument("--candidates", type=Path, required=True)
    tr.add_argument("--k", type=int, default=1)
    tr.add_argument("--threshold", type=float, default=-1.0)
    tr.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    return parser


def _ensure_dir(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")


def cmd_simulate(args) -> int:
    try:
        config = simlab.SimConfig(
            setting=args.setting, N=args.n, r=args.rank, m=args.m, p0=args.p0,
            sigma=args.sigma, sigma_rule=args.sigma_rule,
            n_test=args.n_test if args.setting == 3 else 0,
            seed=args.seed, replicates=args.replicates, min_overlap=args.min_overlap,
        )
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    _ensure_dir(args.out)
    rows = simlab.run_setting(config, args.method, threads=args.threads)
    with open(args.out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        metric_rows_to_csv(rows, fh, wall_time=args.wall_time)
    failed = [r for r in rows if not r.ok]
    for r in failed:
        logger.warning("replicate %d (%s) failed: %s", r.replicate, r.method, r.error)
    if rows and len(failed) == len(rows):
        return 1
    return 0


def _auto_rank(sources, threshold):
    """Smallest rank at which at least one overlap block reaches `threshold`.

    Overlap blocks of every source pair are used; with no overlaps the source
    matrices themselves are used.
    """
    candidates = []
    for s, k in combinations(range(len(sources)), 2):
        a, b = sources[s], sources[k]
        common, ia, _ = np.intersect1d(a.indices, b.indices, return_indices=True)
        if common.size:
            candidates.append((f"{a.label} & {b.label}", a.matrix[np.ix_(ia, ia)]))
    if not candidates:
        candidates = [(src.label, src.matrix) for src in sources]
    choices = []
    for name, M in candidates:
        vals = np.linalg.eigvalsh(M)[::-1]
        choices.append((select_rank(vals, threshold), name))
    rank, name = min(choices)
    return rank, {"threshold": threshold, "matrix": name,
                  "per_matrix": {n: r for r, n in choices}}


def cmd_complete(args) -> int:
    triplets = [p for p in args.sources.split(",") if p]
    vocabs = [p for p in args.vocab.split(",") if p]
    for p in triplets + vocabs + [d[2] for d in args.dictionary]:
        if not Path(p).is_file():
            raise UsageError(f"input file {p} does not exist")
    _ensure_dir(args.out)
    loaded = load_sources(triplets, vocabs, args.dictionary)
    sources = loaded.sources

    if args.rank is not None:
        r, selection = args.rank, {"fixed": args.rank}
    else:
        r, selection = _auto_rank(sources, args.rank_auto)
    if r < 1:
        raise UsageError(f"rank must be positive, got {r}")

    if args.method == "belt":
        result = complete(sources, r, min_overlap=args.min_overlap, threads=args.threads)
    elif args.method == "smc":
        result = baselines.smc_complete(sources, r, threads=args.threads)
    else:
        result = baselines.pretrain_complete(sources, r)

    names = loaded.names_for(result.global_index)
    write_triplets(args.out / "completed.tsv", names, result.low_rank())
    write_embeddings(args.out / "embeddings.tsv", names, result.embeddings)

    values = result.factors.values
    try:
        tau = condition_number(values)
    except ValidationError:
        tau = None
    report = {
        "method": args.method,
        "rank": r,
        "rank_selection": selection,
        "n_entities": int(result.global_index.size),
        "sources": [
            {"label": src.label, "entities": int(src.size), "sigma_hat": float(sig)}
            for src, sig in zip(sources, result.noise_estimates)
        ],
        "imputation_log": [
            {
                "pair": [result.labels[p.s], result.labels[p.k]],
                "sigma_sum": p.sigma_sum,
                "overlap": p.overlap,
                "entries_assigned": p.n_assigned,
                "status": p.status,
                **({"detail": p.detail} if p.detail else {}),
            }
            for p in result.imputation_log
        ],
        "eigenvalues": [float(v) for v in values],
        "coherence": coherence(result.factors.vectors),
        "condition_number": tau,
    }
    with open(args.out / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_translate(args) -> int:
    for p in (args.embeddings, args.queries, args.candidates):
        if not p.is_file():
            raise UsageError(f"input file {p} does not exist")
    if args.k < 1:
        raise UsageError("--k must be positive")
    tokens, X = read_embeddings(args.embeddings)
    row = {tok: i for i, tok in enumerate(tokens)}

    cand_rows, cand_names = [], {}
    for lineno, tok in read_token_list(args.candidates):
        if tok not in row:
            logger.warning("%s:%d: unknown candidate token %r skipped", args.candidates, lineno, tok)
            continue
        if row[tok] not in cand_names:
            cand_rows.append(row[tok])
            cand_names[row[tok]] = tok
    queries = read_token_list(args.queries)
    if not cand_rows:
        logger.error("no known candidate tokens")
        return 1

    out = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else sys.stdout
    failures = 0
    try:
        for lineno, tok in queries:
            if tok not in row:
                logger.warning("%s:%d: unknown query token %r skipped", args.queries, lineno, tok)
                failures += 1
                continue
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                ranked = translate(X, row[tok], cand_rows, args.k, args.threshold)
            for w in caught:
                logger.warning("query %r: %s", tok, w.message)
            if np.linalg.norm(X[row[tok]]) == 0:
                failures += 1
            for rank, (j, cos) in enumerate(ranked, start=1):
                out.write(f"{tok}\t{rank}\t{cand_names[j]}\t{format_float(cos)}\n")
    finally:
        if args.out:
            out.close()
    return 1 if queries and failures == len(queries) else 0


COMMANDS = {"simulate": cmd_simulate, "complete": cmd_complete, "translate": cmd_translate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"belt: error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"belt: parse error: {exc}", file=sys.stderr)
        return 2
    except CompletionError as exc:
        print(f"belt: completion failed: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"belt: invalid input: {exc}", file=sys.stderr)
        return 2
    except BeltError as exc:
        print(f"belt: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
