"""Command-line entry point.

Subcommands cover the full pipeline: ``synth`` emits a dataset bundle,
``fit`` turns a bundle into a bank of posterior samples, ``rank-train``
learns sparse sample weights on the database split, ``query`` ranks the
database for one query, ``eval`` scores a method over the query split,
and ``sweep`` runs the synthetic grid end to end. Every subcommand is a
pure function of its input files, flags, and the global seed.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

from .core import DataError, NumericalError, SamplerConfig
from .dataio import export_report, load_bank, load_bundle, save_bank, save_bundle
from .pipeline import (
    EVAL_METHODS,
    derive_seed,
    fit_bank,
    map_report,
    rank_queries,
    spearman_report,
    split_ids,
    train_weights,
)
from .synth import (
    SynthConfig,
    gen_clustered,
    gen_unclustered,
    mimic_computer,
    mimic_landmine,
    mimic_restaurant,
)

SPLIT_FILE = "split.json"


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")


def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exprank",
        description="Retrieve relevant experiments from a bank of fitted models.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0, help="global seed; all stages derive from it")
        p.add_argument("--out", required=True, help="output directory or file")

    p_synth = sub.add_parser(
        "synth", help="generate a synthetic dataset bundle",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_synth.add_argument(
        "--kind",
        choices=["clustered", "unclustered", "landmine", "computer", "restaurant"],
        default="clustered",
        help="generator to use",
    )
    p_synth.add_argument("--clusters", type=int, default=20, help="number of clusters")
    p_synth.add_argument("--cluster-rate", type=float, default=10.0, help="Poisson rate of experiments per cluster")
    p_synth.add_argument("--total", type=int, default=200, help="experiment count (unclustered)")
    p_synth.add_argument("--d", type=int, default=10, help="covariate dimension")
    p_synth.add_argument("--n-rate", type=float, default=18.0, help="Poisson rate of observations per experiment")
    p_synth.add_argument("--snr", type=float, default=0.5, help="noise-to-signal variance ratio")
    p_synth.add_argument("--center-scale", type=float, default=2.0, help="cluster center standard deviation")
    p_synth.add_argument("--within-scale", type=float, default=0.2, help="within-cluster standard deviation")
    add_common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_fit = sub.add_parser(
        "fit", help="fit posterior samples for every experiment in a bundle",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_fit.add_argument("--bundle", required=True, help="bundle directory or manifest path")
    p_fit.add_argument("--m", type=int, default=100, help="posterior samples kept per experiment")
    p_fit.add_argument("--burn-in", type=int, default=500, help="discarded initial Gibbs iterations")
    p_fit.add_argument("--thin", type=int, default=1, help="keep every thin-th draw after burn-in")
    p_fit.add_argument("--mode", choices=["binary", "text"], default="binary", help="bank file format")
    add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_train = sub.add_parser(
        "rank-train", help="split the bank and learn sparse sample weights",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_train.add_argument("--bank", required=True, help="bank directory")
    p_train.add_argument("--K", type=int, default=25, dest="k_top", help="top-K neighbours preserved per query")
    p_train.add_argument("--lambda", type=float, default=1.0, dest="lam", help="L1 regularization strength")
    p_train.add_argument("--train-fraction", type=float, default=0.75, help="fraction of experiments in the database split")
    p_train.add_argument("--seed", type=int, default=0, help="global seed; all stages derive from it")
    p_train.add_argument("--out", default=None, help="output bank directory (defaults to --bank)")
    p_train.set_defaults(func=cmd_rank_train)

    p_query = sub.add_parser(
        "query", help="rank the database for one query experiment",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_query.add_argument("--bank", required=True, help="bank directory")
    p_query.add_argument("--query", required=True, help="query experiment id")
    p_query.add_argument("--method", choices=list(EVAL_METHODS), default="ml_uniform", help="scoring method")
    p_query.add_argument("--every-k", type=int, default=10, help="stride for the every-k baseline")
    p_query.add_argument("--out", default=None, help="output CSV (stdout if omitted)")
    p_query.set_defaults(func=cmd_query)

    p_eval = sub.add_parser(
        "eval", help="evaluate methods over the stored query split",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_eval.add_argument("--bank", required=True, help="bank directory with split.json")
    p_eval.add_argument(
        "--method", action="append", choices=list(EVAL_METHODS), default=None,
        help="method to evaluate (repeatable; default ml_uniform)",
    )
    p_eval.add_argument("--metric", choices=["map", "spearman"], default="map", help="evaluation metric")
    p_eval.add_argument("--every-k", type=int, default=10, help="stride for the every-k baseline")
    p_eval.add_argument("--K", type=int, default=25, dest="k_top", help="K recorded in the report")
    p_eval.add_argument("--lambda", type=float, default=1.0, dest="lam", help="lambda recorded in the report")
    add_common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser(
        "sweep", help="run the synthetic grid end to end",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_sweep.add_argument("--kind", choices=["clustered", "unclustered"], default="clustered", help="generator")
    p_sweep.add_argument("--grid-d", type=_int_list, default=[10, 18, 32], help="covariate dimensions")
    p_sweep.add_argument("--grid-n", type=_int_list, default=[10, 18, 32], help="observation rates")
    p_sweep.add_argument("--grid-snr", type=_float_list, default=[0.1, 0.5, 1.0], help="noise-to-signal ratios")
    p_sweep.add_argument("--grid-m", type=_int_list, default=[100, 500], help="posterior sample counts")
    p_sweep.add_argument("--clusters", type=int, default=20, help="number of clusters")
    p_sweep.add_argument("--cluster-rate", type=float, default=10.0, help="Poisson rate per cluster")
    p_sweep.add_argument("--total", type=int, default=200, help="experiment count (unclustered)")
    p_sweep.add_argument("--K", type=int, default=25, dest="k_top", help="top-K neighbours preserved per query")
    p_sweep.add_argument("--lambda", type=float, default=1.0, dest="lam", help="L1 regularization strength")
    p_sweep.add_argument("--every-k", type=int, default=10, help="stride for the every-k baseline")
    p_sweep.add_argument("--burn-in", type=int, default=500, help="discarded initial Gibbs iterations")
    p_sweep.add_argument("--train-fraction", type=float, default=0.75, help="database split fraction")
    p_sweep.add_argument("--workers", type=int, default=1, help="concurrent sweep cells")
    add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def cmd_synth(args) -> int:
    if args.kind == "clustered":
        cfg = SynthConfig(
            clusters=args.clusters, cluster_rate=args.cluster_rate, total=args.total,
            d=args.d, n_rate=args.n_rate, snr_ratio=args.snr,
            center_scale=args.center_scale, within_scale=args.within_scale, seed=args.seed,
        )
        bank = gen_clustered(cfg)
    elif args.kind == "unclustered":
        cfg = SynthConfig(
            clusters=0, cluster_rate=args.cluster_rate, total=args.total,
            d=args.d, n_rate=args.n_rate, snr_ratio=args.snr,
            center_scale=args.center_scale, within_scale=args.within_scale, seed=args.seed,
        )
        bank = gen_unclustered(cfg)
    elif args.kind == "landmine":
        bank = mimic_landmine(args.seed)
    elif args.kind == "computer":
        bank = mimic_computer(args.seed)
    else:
        bank = mimic_restaurant(args.seed)
    save_bundle(bank, args.out, name=args.kind)
    print(f"synth kind={args.kind} experiments={bank.size} d={bank.d} out={args.out}")
    return 0


def cmd_fit(args) -> int:
    bank = load_bundle(args.bundle)
    config = SamplerConfig(n_samples=args.m, burn_in=args.burn_in, thin=args.thin)
    fitted = fit_bank(bank, config, args.seed)
    save_bank(fitted, args.out, mode=args.mode)
    print(f"fit experiments={fitted.size} m={args.m} out={args.out}")
    return 0


def cmd_rank_train(args) -> int:
    bank = load_bank(args.bank)
    database_ids, query_ids = split_ids(bank, args.train_fraction, args.seed)
    trained, result = train_weights(bank, database_ids, args.k_top, args.lam, args.seed)
    out = Path(args.out) if args.out else Path(args.bank)
    save_bank(trained, out)
    split = {
        "database_ids": list(database_ids),
        "query_ids": list(query_ids),
        "train_fraction": args.train_fraction,
        "seed": args.seed,
        "K": args.k_top,
        "lambda": args.lam,
    }
    (out / SPLIT_FILE).write_text(
        json.dumps(split, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    nnz = int(sum(result.nonzero_per_experiment.values()))
    total = int(result.w.shape[0])
    print(
        f"rank-train database={len(database_ids)} queries={len(query_ids)} "
        f"sweeps={result.iterations} nonzero={nnz}/{total} "
        f"negative={result.negative_weight_count} out={out}"
    )
    return 0


def _load_split(bank_dir: Path) -> dict | None:
    split_path = bank_dir / SPLIT_FILE
    if not split_path.exists():
        return None
    try:
        return json.loads(split_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{split_path}: malformed JSON ({exc})") from None


def cmd_query(args) -> int:
    bank = load_bank(args.bank)
    if args.query not in set(bank.ids()):
        raise DataError(f"query id {args.query!r} not in bank")
    split = _load_split(Path(args.bank))
    if split is not None and args.query in split["query_ids"]:
        candidates = split["database_ids"]
    else:
        candidates = [eid for eid in bank.ids() if eid != args.query]
    rankings = rank_queries(bank, candidates, [args.query], args.method, args.every_k)
    ranking = rankings[args.query]
    lines = ["rank,candidate,score"]
    lines += [
        f"{rank},{cid},{score:.17g}"
        for rank, (cid, score) in enumerate(ranking.ranked, start=1)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    bank = load_bank(args.bank)
    split = _load_split(Path(args.bank))
    if split is None:
        raise DataError(f"{Path(args.bank) / SPLIT_FILE}: file missing (run rank-train first)")
    database_ids = split["database_ids"]
    query_ids = split["query_ids"]
    methods = args.method or ["ml_uniform"]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {"K": args.k_top, "lambda": args.lam, "every_k": args.every_k}
    for method in methods:
        if args.metric == "map":
            report, rankings = map_report(
                bank, database_ids, query_ids, method, args.every_k, params
            )
            value = f"map={report.map_score:.4f}"
        else:
            report, rankings = spearman_report(
                bank, database_ids, query_ids, method, args.every_k, params
            )
            value = f"spearman={report.spearman:.4f}"
        export_report(report, rankings, out_dir / f"report_{method}.csv")
        print(
            f"eval method={method} {value} storage={report.storage_fraction:.4f} "
            f"combined={report.combined:.4f}"
        )
    return 0


def sweep_cells(grid_d, grid_n, grid_snr, grid_m):
    """Cross product of the sweep grids, in deterministic order."""
    return list(itertools.product(grid_d, grid_n, grid_snr, grid_m))


def _run_sweep_cell(payload):
    """One full pipeline run for a single grid cell; returns summary rows."""
    (kind, d, n_rate, snr, m, cell_seed, clusters, cluster_rate, total,
     k_top, lam, every_k, burn_in, train_fraction, cell_dir) = payload
    cfg = SynthConfig(
        clusters=clusters if kind == "clustered" else 0,
        cluster_rate=cluster_rate,
        total=total,
        d=d,
        n_rate=float(n_rate),
        snr_ratio=snr,
        seed=cell_seed,
    )
    bank = gen_clustered(cfg) if kind == "clustered" else gen_unclustered(cfg)
    config = SamplerConfig(n_samples=m, burn_in=burn_in)
    bank = fit_bank(bank, config, cell_seed)
    database_ids, query_ids = split_ids(bank, train_fraction, cell_seed)
    bank, _ = train_weights(bank, database_ids, k_top, lam, cell_seed)

    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    params = {"K": k_top, "lambda": lam, "every_k": every_k}
    rows = []
    if kind == "clustered":
        methods = ["ml_uniform", "ml_weighted", "every_k", "l2_baseline"]
        for method in methods:
            report, rankings = map_report(
                bank, database_ids, query_ids, method, every_k, params
            )
            export_report(report, rankings, cell_dir / f"report_{method}.csv")
            rows.append((method, "map", report.map_score, report.storage_fraction, report.combined))
    else:
        for method in ["ml_weighted", "every_k"]:
            report, rankings = spearman_report(
                bank, database_ids, query_ids, method, every_k, params
            )
            export_report(report, rankings, cell_dir / f"report_{method}.csv")
            rows.append((method, "spearman", report.spearman, report.storage_fraction, report.combined))
    return rows


def cmd_sweep(args) -> int:
    if not (args.grid_d and args.grid_n and args.grid_snr and args.grid_m):
        raise DataError("sweep grids must be nonempty")
    cells = sweep_cells(args.grid_d, args.grid_n, args.grid_snr, args.grid_m)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    payloads = []
    names = []
    for i, (d, n_rate, snr, m) in enumerate(cells):
        name = f"d{d}_n{n_rate}_snr{snr:g}_m{m}"
        names.append(name)
        payloads.append(
            (
                args.kind, d, n_rate, snr, m, derive_seed(args.seed, "synth", i),
                args.clusters, args.cluster_rate, args.total,
                args.k_top, args.lam, args.every_k, args.burn_in,
                args.train_fraction, str(out_dir / name),
            )
        )

    summary_path = out_dir / "sweep_summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        import csv

        writer = csv.writer(fh)
        writer.writerow(
            ["cell", "kind", "d", "n_rate", "snr", "m",
             "method", "metric", "value", "storage_fraction", "combined"]
        )
        fh.flush()

        if args.workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                results = pool.map(_run_sweep_cell, payloads)
                for name, cell, rows in zip(names, cells, results):
                    _write_cell_rows(writer, fh, name, args.kind, cell, rows)
        else:
            for name, cell, payload in zip(names, cells, payloads):
                rows = _run_sweep_cell(payload)
                _write_cell_rows(writer, fh, name, args.kind, cell, rows)
    print(f"sweep cells={len(cells)} out={out_dir}")
    return 0


def _write_cell_rows(writer, fh, name, kind, cell, rows):
    d, n_rate, snr, m = cell
    for method, metric, value, fraction, combined in rows:
        writer.writerow(
            [name, kind, d, n_rate, f"{snr:g}", m, method, metric,
             f"{value:.17g}", f"{fraction:.17g}", f"{combined:.17g}"]
        )
    fh.flush()
    print(f"cell {name} done rows={len(rows)}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: data: {str(exc).replace(chr(10), ' ')}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: numerical: {str(exc).replace(chr(10), ' ')}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"error: usage: {str(exc).replace(chr(10), ' ')}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
