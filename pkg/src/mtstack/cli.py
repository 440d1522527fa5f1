"""Command-line front end: split, train, predict, evaluate, benchmark, compare.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
Failures print one machine-parsable line to stderr prefixed with "error:".
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys

import numpy as np

from . import experiment, learners, metrics, mtr, tabular

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

LOCK_NAME = ".mtstack.lock"


class UsageError(Exception):
    pass


def _error(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


@contextlib.contextmanager
def _dir_lock(out_dir):
    """Guard an output directory against concurrent writers."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, LOCK_NAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"output directory '{out_dir}' is locked by another invocation "
            f"(remove {path} if stale)") from None
    try:
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(path)


def _parse_targets(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    if not names:
        raise UsageError("--targets needs at least one column name")
    return names


def _learner_spec(kind: str, args) -> learners.LearnerSpec:
    if kind not in learners.KINDS:
        raise UsageError(f"unknown learner '{kind}', allowed: {', '.join(learners.KINDS)}")
    return learners.LearnerSpec(
        kind,
        rf=learners.RfParams(n_trees=args.rf_trees, mtry=args.rf_mtry,
                             min_node_size=args.rf_min_node),
        svr=learners.SvrParams(c=args.svr_c, epsilon=args.svr_epsilon,
                               gamma=args.svr_gamma, tolerance=args.svr_tolerance),
    )


def _load_train_test(args):
    dataset = tabular.load_csv(args.dataset, _parse_targets(args.targets))
    split = tabular.load_split(args.split)
    n = dataset.x.shape[0]
    upper = max(int(split.train.max(initial=-1)), int(split.test.max(initial=-1)))
    if upper >= n:
        raise tabular.DataError(
            f"split references row {upper} but dataset has {n} rows")
    return dataset, split


def _add_learner_flags(p) -> None:
    p.add_argument("--rf-trees", type=int, default=500, help="forest size")
    p.add_argument("--rf-mtry", type=int, default=None,
                   help="features tried per split (default: ceil(f/3))")
    p.add_argument("--rf-min-node", type=int, default=5, help="leaf size threshold")
    p.add_argument("--svr-c", type=float, default=1.0, help="SVR box constraint")
    p.add_argument("--svr-epsilon", type=float, default=0.1, help="insensitive tube width")
    p.add_argument("--svr-gamma", type=float, default=None,
                   help="radial kernel width (default: 1/f)")
    p.add_argument("--svr-tolerance", type=float, default=1e-3, help="KKT stop tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtstack",
        description="Multi-target regression workflows: Kennard-Stone splitting, "
                    "seven MTR methods over RF/SVR base learners, metric reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a Kennard-Stone train/test split CSV")
    p.add_argument("--dataset", required=True, help="input CSV with header row")
    p.add_argument("--targets", required=True, help="comma-separated target columns")
    p.add_argument("--fraction", type=float, default=2.0 / 3.0,
                   help="training fraction (default 2/3)")
    p.add_argument("--out", required=True, help="output split CSV (index,role)")

    p = sub.add_parser("train", help="train one MTR method and save a model bundle")
    p.add_argument("--dataset", required=True, help="input CSV with header row")
    p.add_argument("--targets", required=True, help="comma-separated target columns")
    p.add_argument("--split", required=True, help="split CSV from 'mtstack split'")
    p.add_argument("--method", required=True, help=f"one of: {', '.join(mtr.METHODS)}")
    p.add_argument("--base", default="rf", help="base learner kind")
    p.add_argument("--pool", default=None,
                   help="comma-separated level-0 learner kinds (stacking methods)")
    p.add_argument("--seed", type=int, default=42, help="master seed")
    p.add_argument("--erc-chains", type=int, default=10, help="number of chains")
    p.add_argument("--drs-layers", type=int, default=5, help="stacked layers")
    p.add_argument("--motc-children", type=int, default=2, help="tree children per node")
    p.add_argument("--motc-depth", type=int, default=2, help="tree depth")
    p.add_argument("--filter", default="mean-threshold", choices=mtr.FILTER_RULES,
                   help="prediction-column relevance rule")
    p.add_argument("--oof", action="store_true",
                   help="use out-of-fold level-0 predictions instead of in-sample")
    p.add_argument("--out", required=True, help="output bundle directory")
    _add_learner_flags(p)

    p = sub.add_parser("predict", help="predict with a saved bundle")
    p.add_argument("--bundle", required=True, help="bundle directory")
    p.add_argument("--dataset", required=True, help="input CSV with header row")
    p.add_argument("--targets", required=True, help="comma-separated target columns")
    p.add_argument("--split", default=None, help="split CSV (needed for --rows)")
    p.add_argument("--rows", default="all", choices=("all", "train", "test"),
                   help="which rows to predict")
    p.add_argument("--out", required=True, help="output prediction CSV")

    p = sub.add_parser("evaluate", help="evaluate a bundle on the test rows")
    p.add_argument("--bundle", required=True, help="bundle directory")
    p.add_argument("--dataset", required=True, help="input CSV with header row")
    p.add_argument("--targets", required=True, help="comma-separated target columns")
    p.add_argument("--split", required=True, help="split CSV from 'mtstack split'")
    p.add_argument("--out", required=True, help="output report directory")

    p = sub.add_parser("benchmark", help="run the method grid on a public MTR dataset")
    p.add_argument("--suite", required=True,
                   help=f"one of: {', '.join(sorted(experiment.BENCHMARK_SUITES))}")
    p.add_argument("--data-dir", required=True,
                   help="directory holding <suite>.csv (user-supplied, targets last)")
    p.add_argument("--seed", type=int, default=42, help="master seed")
    p.add_argument("--fraction", type=float, default=2.0 / 3.0,
                   help="training fraction (default 2/3)")
    p.add_argument("--oof", action="store_true",
                   help="use out-of-fold level-0 predictions instead of in-sample")
    p.add_argument("--out", required=True, help="output records directory")

    p = sub.add_parser("compare", help="render RPT/aRRMSE/RPD reports from records")
    p.add_argument("--records", required=True, help="records directory from a run")
    p.add_argument("--out", required=True, help="output reports directory")

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--fraction", type=float, default=None,
                   help="override config train_fraction")
    p.add_argument("--dataset", default=None, help="override config dataset path")
    p.add_argument("--out", default=None, help="override config output_dir")
    p.add_argument("--oof", action="store_true", help="override: out-of-fold stacking")
    return parser


def cmd_split(args) -> int:
    if not 0.0 < args.fraction <= 1.0:
        raise UsageError(f"--fraction must be in (0, 1], got {args.fraction}")
    dataset = tabular.load_csv(args.dataset, _parse_targets(args.targets))
    split = tabular.kennard_stone_split(dataset.x, args.fraction)
    tabular.save_split(split, args.out)
    print(f"split: {split.train.size} train, {split.test.size} test -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.method not in mtr.METHODS:
        raise UsageError(
            f"unknown method '{args.method}', allowed: {', '.join(mtr.METHODS)}")
    base = _learner_spec(args.base, args)
    pool: tuple = ()
    if args.pool:
        pool = tuple(_learner_spec(k.strip(), args) for k in args.pool.split(","))
    if args.method in ("mtas", "mtsg", "sg") and not pool:
        pool = (base,)
    dataset, split = _load_train_test(args)
    spec = mtr.MtrMethodSpec(
        method=args.method, base=base, level0_pool=pool,
        erc_chains=args.erc_chains, drs_max_layers=args.drs_layers,
        motc_max_children=args.motc_children, motc_max_depth=args.motc_depth,
        filter_rule=args.filter, seed=args.seed, out_of_fold=args.oof)

    x_train = dataset.x[split.train]
    y_train = dataset.y[split.train]
    x_scale = tabular.fit_autoscale(x_train)
    y_scale = tabular.fit_autoscale(y_train)
    with _dir_lock(args.out):
        model = mtr.mtr_train(
            tabular.apply_autoscale(x_train, x_scale),
            tabular.apply_autoscale(y_train, y_scale),
            spec, target_names=dataset.target_names)
        model = mtr.attach_scaling(model, x_scale, y_scale)
        mtr.save_bundle(model, args.out)
    kinds = ",".join(p.kind for p in pool) or base.kind
    print(f"trained {args.method} (base={base.kind} pool={kinds}) -> {args.out}")
    return EXIT_OK


def _select_rows(args, dataset):
    if args.rows == "all":
        return np.arange(dataset.x.shape[0])
    if not args.split:
        raise UsageError(f"--rows {args.rows} requires --split")
    split = tabular.load_split(args.split)
    return split.train if args.rows == "train" else split.test


def cmd_predict(args) -> int:
    model = mtr.load_bundle(args.bundle)
    dataset = tabular.load_csv(args.dataset, _parse_targets(args.targets))
    rows = _select_rows(args, dataset)
    preds = mtr.mtr_predict(model, dataset.x[rows])
    lines = ["row," + ",".join(preds.target_names)]
    for i, row in zip(rows, preds.values):
        lines.append(f"{int(i)}," + ",".join(format(v, ".12g") for v in row))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"predicted {len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = mtr.load_bundle(args.bundle)
    dataset, split = _load_train_test(args)
    if tuple(dataset.target_names) != tuple(model.target_names):
        raise tabular.DataError(
            f"bundle targets {model.target_names} do not match dataset "
            f"targets {dataset.target_names}")
    x_test = dataset.x[split.test]
    if x_test.shape[1] != model.feature_count:
        raise tabular.DataError(
            f"expected feature width {model.feature_count}, got {x_test.shape[1]}")
    preds = mtr.mtr_predict(model, x_test)
    report = metrics.build_report(
        dataset.y[split.test], preds.values, dataset.target_names,
        provenance={"method": model.spec.method, "base": model.spec.base.kind,
                    "pool": ",".join(p.kind for p in model.spec.level0_pool),
                    "seed": model.spec.seed, "dataset": args.dataset})
    with _dir_lock(args.out):
        with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
            fh.write(metrics.report_to_csv(report))
        with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(metrics.report_summary(report))
    print(f"arrmse {report.arrmse:.6f} -> {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if args.suite not in experiment.BENCHMARK_SUITES:
        raise UsageError(
            f"unknown suite '{args.suite}', known: "
            f"{', '.join(sorted(experiment.BENCHMARK_SUITES))}")
    path = os.path.join(args.data_dir, f"{args.suite}.csv")
    if not os.path.exists(path):
        raise tabular.DataError(
            f"missing dataset file {path} (public benchmark files are "
            f"user-supplied; place {args.suite}.csv in --data-dir)")
    d = experiment.BENCHMARK_SUITES[args.suite]
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    targets = tuple(h.strip() for h in header[-d:])
    config = experiment.ExperimentConfig(
        dataset=path, targets=targets,
        grid=experiment.benchmark_grid(args.seed, args.oof),
        train_fraction=args.fraction, seed=args.seed,
        output_dir=None, out_of_fold=args.oof)
    with _dir_lock(args.out):
        records = experiment.run_experiment(config)
        experiment.save_records(records, config, args.out)
        table = experiment.render_benchmark_table(records, args.suite)
        with open(os.path.join(args.out, "benchmark_table.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(table)
    print(table, end="")
    failed = [r for r in records if r.status != "ok"]
    if failed:
        _error(f"{len(failed)} grid entr{'y' if len(failed) == 1 else 'ies'} failed")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_compare(args) -> int:
    records = experiment.load_records(args.records)
    if not records:
        raise tabular.DataError(f"no records found in {args.records}")
    with _dir_lock(args.out):
        try:
            rpt_table = experiment.render_rpt_table(records)
        except ValueError as exc:
            rpt_table = f"RPT table unavailable: {exc}\n"
            print(f"warning: {exc}", file=sys.stderr)
        with open(os.path.join(args.out, "rpt_table.txt"), "w", encoding="utf-8") as fh:
            fh.write(rpt_table)
        with open(os.path.join(args.out, "arrmse_chart.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write(experiment.render_arrmse_chart_data(records))
        # the per-target reference SD is recoverable from any record's rpd
        first_ok = next(r for r in records if r.status == "ok" and r.per_target)
        sds = {s.target: s.rpd * s.rmse for s in first_ok.per_target}
        with open(os.path.join(args.out, "rpd_table.txt"), "w", encoding="utf-8") as fh:
            fh.write(experiment.render_rpd_table(records, sds))
    print(f"reports -> {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        obj = json.load(fh)
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.fraction is not None:
        obj["train_fraction"] = args.fraction
    if args.dataset is not None:
        obj["dataset"] = args.dataset
    if args.out is not None:
        obj["output_dir"] = args.out
    if args.oof:
        obj["out_of_fold"] = True
    config = experiment.config_from_json(obj)
    if not config.output_dir:
        raise UsageError("no output directory (set output_dir in config or pass --out)")
    with _dir_lock(config.output_dir):
        records = experiment.run_experiment(config)
    failed = [r for r in records if r.status != "ok"]
    for r in failed:
        _error(r.status)
    print(f"{len(records) - len(failed)}/{len(records)} grid entries ok "
          f"-> {config.output_dir}")
    return EXIT_RUNTIME if failed else EXIT_OK


_COMMANDS = {
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "compare": cmd_compare,
    "run": cmd_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _error(str(exc))
        return EXIT_USAGE
    except (tabular.DataError, FileNotFoundError) as exc:
        _error(str(exc))
        return EXIT_DATA
    except Exception as exc:
        _error(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
