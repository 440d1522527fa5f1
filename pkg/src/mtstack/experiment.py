"""Config-driven experiment runner: split, scale, train a method grid, report.

The protocol: Kennard-Stone split on the raw features, auto-scaling fitted
on the training split only (applied to features and targets), every grid
entry trained on the scaled training data, evaluation on the test split in
original units. Single-target entries are evaluated first so the relative
performance per target (RPT) can be attached to multi-target entries that
use the same base learner.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import learners, metrics, mtr, tabular

RECORDS_SCHEMA = "mtstack-records/1"

# Public multi-target benchmark suites: name -> number of trailing target
# columns in the user-supplied CSV.
BENCHMARK_SUITES = {
    "atp1d": 6, "atp7d": 6, "edm": 2, "sf1": 3, "sf2": 3,
    "jura": 3, "enb": 2, "slump": 3, "andro": 6, "scpf": 3,
}


@dataclass(frozen=True)
class TargetResult:
    target: str
    rmse: float
    rrmse: float
    rpd: float
    rpd_band: str
    rpt: float | None = None


@dataclass(frozen=True)
class ResultRecord:
    config_hash: str
    method: str
    base: str
    pool: tuple[str, ...]
    seed: int
    per_target: tuple[TargetResult, ...] = ()
    arrmse: float | None = None
    wall_seconds: float = 0.0
    status: str = "ok"

    @property
    def learner_label(self) -> str:
        return self.base


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    targets: tuple[str, ...]
    grid: tuple[mtr.MtrMethodSpec, ...]
    train_fraction: float = 2.0 / 3.0
    seed: int = 42
    output_dir: str | None = None
    out_of_fold: bool = False

    def __post_init__(self):
        if not self.grid:
            raise ValueError("experiment grid is empty")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")


def _learner_from_config(obj) -> learners.LearnerSpec:
    """Accept a bare kind string or a dict of kind plus hyperparameters."""
    if isinstance(obj, str):
        return learners.LearnerSpec(obj)
    obj = dict(obj)
    kind = obj.pop("kind")
    rf_keys = {"n_trees", "mtry", "min_node_size"}
    svr_keys = {"c", "epsilon", "gamma", "tolerance", "max_passes"}
    rf_kwargs = {k: obj[k] for k in rf_keys & obj.keys()}
    svr_kwargs = {k: obj[k] for k in svr_keys & obj.keys()}
    unknown = obj.keys() - rf_keys - svr_keys
    if unknown:
        raise ValueError(f"unknown learner parameter(s): {sorted(unknown)}")
    return learners.LearnerSpec(
        kind, rf=learners.RfParams(**rf_kwargs), svr=learners.SvrParams(**svr_kwargs))


def grid_entry_from_config(obj: dict, master_seed: int, index: int,
                           out_of_fold: bool) -> mtr.MtrMethodSpec:
    obj = dict(obj)
    method = obj.pop("method")
    base = _learner_from_config(obj.pop("base", "rf"))
    pool = tuple(_learner_from_config(p) for p in obj.pop("pool", ()))
    if method in ("mtas", "mtsg", "sg") and not pool:
        pool = (base,)
    token = base.kind + "+" + ",".join(p.kind for p in pool)
    seed = mtr.derive_seed(master_seed, method, token, index)
    return mtr.MtrMethodSpec(
        method=method, base=base, level0_pool=pool, seed=seed,
        out_of_fold=out_of_fold,
        **{k: obj[k] for k in ("erc_chains", "drs_max_layers", "motc_max_children",
                               "motc_max_depth", "filter_rule") if k in obj},
    )


def config_from_json(obj: dict) -> ExperimentConfig:
    seed = obj.get("seed", 42)
    oof = obj.get("out_of_fold", False)
    grid = tuple(
        grid_entry_from_config(entry, seed, idx, oof)
        for idx, entry in enumerate(obj["grid"])
    )
    return ExperimentConfig(
        dataset=obj["dataset"],
        targets=tuple(obj["targets"]),
        grid=grid,
        train_fraction=obj.get("train_fraction", 2.0 / 3.0),
        seed=seed,
        output_dir=obj.get("output_dir"),
        out_of_fold=oof,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_json(json.load(fh))


def _config_hash(config: ExperimentConfig) -> str:
    payload = {
        "dataset": config.dataset,
        "targets": list(config.targets),
        "train_fraction": config.train_fraction,
        "seed": config.seed,
        "out_of_fold": config.out_of_fold,
        "grid": [mtr.method_spec_to_dict(s) for s in config.grid],
    }
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def run_experiment(config: ExperimentConfig,
                   dataset: tabular.Dataset | None = None) -> list[ResultRecord]:
    """Run the whole grid on one Kennard-Stone split and persist records."""
    if dataset is None:
        dataset = tabular.load_csv(config.dataset, config.targets)
    split = tabular.kennard_stone_split(dataset.x, config.train_fraction)
    if split.test.size == 0:
        raise ValueError("empty test set: train_fraction leaves no test rows")
    x_train, x_test = dataset.x[split.train], dataset.x[split.test]
    y_train, y_test = dataset.y[split.train], dataset.y[split.test]
    x_scale = tabular.fit_autoscale(x_train)
    y_scale = tabular.fit_autoscale(y_train)
    x_train_s = tabular.apply_autoscale(x_train, x_scale)
    y_train_s = tabular.apply_autoscale(y_train, y_scale)

    run_hash = _config_hash(config)
    # single-target baselines first so RPT can be attached (same base learner)
    order = sorted(range(len(config.grid)), key=lambda i: config.grid[i].method != "st")
    st_rmse: dict[str, dict[str, float]] = {}
    records: list[ResultRecord] = [None] * len(config.grid)  # type: ignore[list-item]
    for idx in order:
        spec = config.grid[idx]
        started = time.perf_counter()
        try:
            model = mtr.mtr_train(x_train_s, y_train_s, spec,
                                  target_names=dataset.target_names)
            model = mtr.attach_scaling(model, x_scale, y_scale)
            predictions = mtr.mtr_predict(model, x_test).values
            st_for_base = None if spec.method == "st" else st_rmse.get(spec.base.kind)
            report = metrics.build_report(
                y_test, predictions, dataset.target_names, st_rmses=st_for_base)
            if spec.method == "st":
                st_rmse[spec.base.kind] = {
                    s.target_name: s.rmse for s in report.per_target}
            records[idx] = ResultRecord(
                config_hash=run_hash,
                method=spec.method,
                base=spec.base.kind,
                pool=tuple(p.kind for p in spec.level0_pool),
                seed=spec.seed,
                per_target=tuple(
                    TargetResult(s.target_name, s.rmse, s.rrmse, s.rpd,
                                 s.rpd_band, s.rpt)
                    for s in report.per_target),
                arrmse=report.arrmse,
                wall_seconds=time.perf_counter() - started,
            )
        except Exception as exc:  # persist partial results with a marker
            records[idx] = ResultRecord(
                config_hash=run_hash,
                method=spec.method,
                base=spec.base.kind,
                pool=tuple(p.kind for p in spec.level0_pool),
                seed=spec.seed,
                wall_seconds=time.perf_counter() - started,
                status=f"failed: grid entry {idx} ({spec.method}/{spec.base.kind}): {exc}",
            )
    if config.output_dir:
        save_records(records, config, config.output_dir, split)
    return records


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))  # shortest exact round-trip


def records_to_csv(records) -> tuple[str, str]:
    """(per-target CSV, aggregate CSV); no volatile fields, so bytes are stable."""
    per = [f"# {RECORDS_SCHEMA}",
           "config_hash,method,base,pool,seed,target,rmse,rrmse,rpt,rpd,rpd_band"]
    agg = [f"# {RECORDS_SCHEMA}",
           "config_hash,method,base,pool,seed,arrmse,status"]
    for r in records:
        pool = "+".join(r.pool)
        for s in r.per_target:
            per.append(
                f"{r.config_hash},{r.method},{r.base},{pool},{r.seed},{s.target},"
                f"{_fmt(s.rmse)},{_fmt(s.rrmse)},{_fmt(s.rpt)},{_fmt(s.rpd)},{s.rpd_band}")
        status = r.status.replace(",", ";").replace("\n", " ")
        agg.append(f"{r.config_hash},{r.method},{r.base},{pool},{r.seed},"
                   f"{_fmt(r.arrmse)},{status}")
    return "\n".join(per) + "\n", "\n".join(agg) + "\n"


def save_records(records, config: ExperimentConfig, out_dir, split=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    per_csv, agg_csv = records_to_csv(records)
    with open(os.path.join(out_dir, "per_target.csv"), "w", encoding="utf-8") as fh:
        fh.write(per_csv)
    with open(os.path.join(out_dir, "aggregate.csv"), "w", encoding="utf-8") as fh:
        fh.write(agg_csv)
    lines = [
        f"schema: {RECORDS_SCHEMA}",
        f"config_hash: {records[0].config_hash if records else ''}",
        f"dataset: {config.dataset}",
        f"targets: {','.join(config.targets)}",
        f"train_fraction: {config.train_fraction!r}",
        f"seed: {config.seed}",
        f"out_of_fold: {config.out_of_fold}",
    ]
    if split is not None:
        lines.append(f"n_train: {split.train.size}")
        lines.append(f"n_test: {split.test.size}")
    # wall-clock timings stay on the in-memory records; keeping them out of
    # the files makes every artifact byte-identical across reruns
    for r in records:
        pool = "+".join(r.pool) or "-"
        lines.append(
            f"entry: method={r.method} base={r.base} pool={pool} seed={r.seed} "
            f"status={r.status}")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_records(records_dir) -> list[ResultRecord]:
    """Rebuild records from the two CSVs written by save_records."""
    per_path = os.path.join(records_dir, "per_target.csv")
    agg_path = os.path.join(records_dir, "aggregate.csv")

    def read_rows(path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or not lines[0].startswith(f"# {RECORDS_SCHEMA}"):
            raise ValueError(f"{path}:1: missing schema tag '{RECORDS_SCHEMA}'")
        header = lines[1].split(",")
        rows = []
        for lineno, line in enumerate(lines[2:], start=3):
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells")
            rows.append((lineno, dict(zip(header, cells))))
        return rows

    def parse_float(path, lineno, text):
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad number '{text}'") from None

    per_rows: dict[tuple, list[TargetResult]] = {}
    for lineno, row in read_rows(per_path):
        key = (row["config_hash"], row["method"], row["base"], row["pool"], row["seed"])
        per_rows.setdefault(key, []).append(TargetResult(
            target=row["target"],
            rmse=parse_float(per_path, lineno, row["rmse"]),
            rrmse=parse_float(per_path, lineno, row["rrmse"]),
            rpd=parse_float(per_path, lineno, row["rpd"]),
            rpd_band=row["rpd_band"],
            rpt=parse_float(per_path, lineno, row["rpt"]) if row["rpt"] else None,
        ))
    records = []
    for lineno, row in read_rows(agg_path):
        key = (row["config_hash"], row["method"], row["base"], row["pool"], row["seed"])
        records.append(ResultRecord(
            config_hash=row["config_hash"],
            method=row["method"],
            base=row["base"],
            pool=tuple(row["pool"].split("+")) if row["pool"] else (),
            seed=int(row["seed"]),
            per_target=tuple(per_rows.get(key, ())),
            arrmse=parse_float(agg_path, lineno, row["arrmse"]) if row["arrmse"] else None,
            status=row["status"],
        ))
    return records


# --------------------------------------------------------------------------
# Report rendering
# --------------------------------------------------------------------------

def render_rpt_table(records) -> str:
    """Targets-by-method table of RPT values, best average per learner marked."""
    ok = [r for r in records if r.status == "ok" and r.per_target]
    mtr_rows = [r for r in ok if r.method != "st"]
    st_bases = {r.base for r in ok if r.method == "st"}
    missing = {r.base for r in mtr_rows} - st_bases
    if missing:
        raise ValueError(f"missing single-target baseline for learner(s): {sorted(missing)}")
    if not mtr_rows:
        raise ValueError("no multi-target records to render")
    targets = [s.target for s in mtr_rows[0].per_target]

    averages = {}
    for r in mtr_rows:
        rpts = [s.rpt for s in r.per_target]
        if any(v is None for v in rpts):
            raise ValueError(f"record {r.method}/{r.base} lacks RPT values")
        averages[(r.method, r.base)] = sum(rpts) / len(rpts)
    best_by_base: dict[str, float] = {}
    for (method, base), avg in averages.items():
        best_by_base[base] = max(best_by_base.get(base, -np.inf), round(avg, 2))

    width = max(8, *(len(t) + 2 for t in targets))
    head = f"{'method':<10}{'learner':<10}" + "".join(
        f"{t:>{width}}" for t in targets) + f"{'Average':>{width}}"
    lines = [head, "-" * len(head)]
    for r in mtr_rows:
        avg = round(averages[(r.method, r.base)], 2)
        mark = " *" if avg == best_by_base[r.base] else ""
        cells = "".join(f"{s.rpt:>{width}.2f}" for s in r.per_target)
        lines.append(f"{r.method:<10}{r.base:<10}{cells}{avg:>{width}.2f}{mark}")
    return "\n".join(lines) + "\n"


def render_arrmse_chart_data(records) -> str:
    """CSV of (method, learner, arrmse) plus the lowest single-target row."""
    ok = [r for r in records if r.status == "ok" and r.arrmse is not None]
    if not ok:
        raise ValueError("no records to render")
    lines = ["method,learner,arrmse"]
    for r in ok:
        lines.append(f"{r.method},{r.base},{r.arrmse:.6f}")
    st_values = [r.arrmse for r in ok if r.method == "st"]
    if st_values:
        lines.append(f"st_reference,,{min(st_values):.6f}")
    return "\n".join(lines) + "\n"


def render_rpd_table(records, reference_sds: dict) -> str:
    """Per target: best model(s) by RMSE with the RPD quality band."""
    ok = [r for r in records if r.status == "ok" and r.per_target]
    if not ok:
        raise ValueError("no records to render")
    targets = [s.target for s in ok[0].per_target]
    for t in targets:
        if t not in reference_sds:
            raise ValueError(f"missing reference SD for target '{t}'")
    head = f"{'target':<12}{'best model(s)':<44}{'rmse':>12}{'rpd':>8}  band"
    lines = [head, "-" * len(head)]
    for ti, t in enumerate(targets):
        rmses = [(r.per_target[ti].rmse, r) for r in ok]
        best = min(v for v, _ in rmses)
        winners = [r for v, r in rmses if v == best]
        if len(winners) == len(ok):
            label = "All models"
        else:
            label = ", ".join(
                f"{r.method} ({r.base})" if r.method != "st" else f"st ({r.base})"
                for r in winners)
        value = metrics.rpd(reference_sds[t], best)
        band = metrics.rpd_band(value)
        lines.append(f"{t:<12}{label:<44}{best:>12.4g}{value:>8.2f}  {band}")
    return "\n".join(lines) + "\n"


def benchmark_grid(seed: int, out_of_fold: bool = False) -> tuple[mtr.MtrMethodSpec, ...]:
    """The public-benchmark grid: seven methods, RF and radial SVR bases."""
    entries = []
    for method in ("st", "sst", "erc", "mtas", "motc", "drs", "mtsg"):
        for base in ("rf", "svr_r"):
            entry = {"method": method, "base": base}
            if method in ("mtas", "mtsg"):
                entry["pool"] = ["rf", "svr_r"]
            entries.append(entry)
    return tuple(
        grid_entry_from_config(e, seed, i, out_of_fold) for i, e in enumerate(entries)
    )


def render_benchmark_table(records, suite: str) -> str:
    """Appendix-style aRRMSE table: one row per suite, methods as columns."""
    ok = [r for r in records if r.status == "ok" and r.arrmse is not None]
    methods = ("st", "sst", "erc", "mtas", "motc", "drs", "mtsg")
    bases = ("rf", "svr_r")
    cells = {}
    for r in ok:
        cells[(r.method, r.base)] = r.arrmse
    head = f"{'dataset':<10}" + "".join(
        f"{m + '/' + b:>14}" for m in methods for b in bases)
    row = f"{suite:<10}" + "".join(
        f"{cells.get((m, b), float('nan')):>14.4f}" for m in methods for b in bases)
    return head + "\n" + row + "\n"
