import json

import numpy as np
import pytest

from mtstack import experiment, mtr
from mtstack.experiment import (
    ExperimentConfig,
    ResultRecord,
    TargetResult,
    config_from_json,
    load_records,
    records_to_csv,
    render_arrmse_chart_data,
    render_rpd_table,
    render_rpt_table,
    run_experiment,
    save_records,
)
from mtstack.tabular import Dataset


def small_dataset(seed=5, n=40, f=4, d=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, f))
    latent = rng.normal(size=n)
    y = np.column_stack([
        x[:, 0] + latent + 0.1 * rng.normal(size=n),
        2.0 * latent + 0.1 * rng.normal(size=n),
    ])[:, :d]
    return Dataset(x=x, y=y,
                   feature_names=tuple(f"f{i}" for i in range(f)),
                   target_names=tuple(f"t{i}" for i in range(d)))


def small_config(tmp_path=None, **overrides):
    obj = {
        "dataset": "in-memory",
        "targets": ["t0", "t1"],
        "seed": 21,
        "grid": [
            {"method": "st", "base": {"kind": "rf", "n_trees": 15}},
            {"method": "st", "base": "svr_l"},
            {"method": "sst", "base": {"kind": "rf", "n_trees": 15}},
            {"method": "mtsg", "base": {"kind": "rf", "n_trees": 15},
             "pool": [{"kind": "rf", "n_trees": 15}, "svr_l"]},
        ],
    }
    obj.update(overrides)
    if tmp_path is not None:
        obj["output_dir"] = str(tmp_path / "out")
    return config_from_json(obj)


class TestConfig:
    def test_grid_parsing(self):
        config = small_config()
        assert [s.method for s in config.grid] == ["st", "st", "sst", "mtsg"]
        assert config.grid[0].base.rf.n_trees == 15
        assert config.grid[1].base.kind == "svr_l"
        assert tuple(p.kind for p in config.grid[3].level0_pool) == ("rf", "svr_l")

    def test_entry_seeds_are_distinct_and_stable(self):
        a, b = small_config(), small_config()
        seeds = [s.seed for s in a.grid]
        assert len(set(seeds)) == len(seeds)
        assert seeds == [s.seed for s in b.grid]

    def test_adding_entry_keeps_existing_seeds(self):
        base = small_config()
        extra = small_config(grid=[
            {"method": "st", "base": {"kind": "rf", "n_trees": 15}},
            {"method": "st", "base": "svr_l"},
            {"method": "sst", "base": {"kind": "rf", "n_trees": 15}},
            {"method": "mtsg", "base": {"kind": "rf", "n_trees": 15},
             "pool": [{"kind": "rf", "n_trees": 15}, "svr_l"]},
            {"method": "drs", "base": "svr_l"},
        ])
        assert [s.seed for s in base.grid] == [s.seed for s in extra.grid[:4]]

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError, match="grid is empty"):
            ExperimentConfig(dataset="x", targets=("a",), grid=())

    def test_unknown_learner_parameter(self):
        with pytest.raises(ValueError, match="unknown learner parameter"):
            config_from_json({"dataset": "d", "targets": ["a"], "grid": [
                {"method": "st", "base": {"kind": "rf", "depth": 3}}]})


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("exp")
    config = small_config(tmp)
    dataset = small_dataset()
    records = run_experiment(config, dataset=dataset)
    return config, dataset, records, tmp / "out"


class TestRunExperiment:
    def test_record_counting(self, run):
        config, dataset, records, _ = run
        assert len(records) == len(config.grid)
        for r in records:
            assert r.status == "ok"
            assert len(r.per_target) == 2

    def test_rpt_attached_for_matching_base(self, run):
        _, _, records, _ = run
        by_method = {(r.method, r.base): r for r in records}
        st_rf = by_method[("st", "rf")]
        sst_rf = by_method[("sst", "rf")]
        for st_row, sst_row in zip(st_rf.per_target, sst_rf.per_target):
            assert sst_row.rpt == pytest.approx(st_row.rmse / sst_row.rmse, abs=1e-12)
        assert all(s.rpt is None for s in st_rf.per_target)

    def test_persisted_csvs(self, run):
        _, _, records, out = run
        assert (out / "per_target.csv").exists()
        assert (out / "aggregate.csv").exists()
        assert (out / "manifest.txt").exists()
        loaded = load_records(out)
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert a.method == b.method and a.base == b.base
            assert a.arrmse == pytest.approx(b.arrmse, abs=1e-12)
            for s, t in zip(a.per_target, b.per_target):
                assert s.rmse == pytest.approx(t.rmse, abs=1e-12)

    def test_rerun_byte_identical(self, run, tmp_path):
        config, dataset, _, out = run
        config2 = small_config(tmp_path)
        run_experiment(config2, dataset=dataset)
        for name in ("per_target.csv", "aggregate.csv"):
            assert (out / name).read_bytes() == (tmp_path / "out" / name).read_bytes()

    def test_full_fraction_means_empty_test_set(self):
        config = small_config(train_fraction=1.0)
        with pytest.raises(ValueError, match="empty test set"):
            run_experiment(config, dataset=small_dataset())

    def test_failure_marker_preserves_other_entries(self):
        dataset = small_dataset()
        bad = Dataset(x=dataset.x, y=np.column_stack([dataset.y[:, 0], np.full(40, 2.0)]),
                      feature_names=dataset.feature_names,
                      target_names=dataset.target_names)
        config = small_config()
        records = run_experiment(config, dataset=bad)
        assert all(r.status.startswith("failed:") for r in records)
        assert all("constant" in r.status for r in records)


class TestRendering:
    def make_records(self, rmses_by_method, targets=("a", "b"), st_rmse=(2.0, 4.0)):
        records = []
        st_map = dict(zip(targets, st_rmse))
        for (method, base), rmses in rmses_by_method.items():
            per = []
            for t, v in zip(targets, rmses):
                rpt = None if method == "st" else st_map[t] / v
                per.append(TargetResult(t, v, v / 10, 8.0 / v,
                                        "good" if 1.8 <= 8.0 / v < 2.0 else "poor", rpt))
            records.append(ResultRecord(
                config_hash="h", method=method, base=base, pool=(), seed=1,
                per_target=tuple(per), arrmse=float(np.mean(rmses))))
        return records

    def test_rpt_identity_row(self):
        records = self.make_records({
            ("st", "rf"): [2.0, 4.0],
            ("sst", "rf"): [2.0, 4.0],
        })
        table = render_rpt_table(records)
        row = [l for l in table.splitlines() if l.startswith("sst")][0]
        assert row.count("1.00") == 3  # two targets plus the average

    def test_rpt_average_and_marking(self):
        records = self.make_records({
            ("st", "rf"): [2.0, 4.0],
            ("sst", "rf"): [2.0, 4.0],   # average 1.00
            ("mtsg", "rf"): [1.6, 4.0],  # average (1.25 + 1.0) / 2 = 1.125 -> best
        })
        table = render_rpt_table(records)
        mtsg_row = [l for l in table.splitlines() if l.startswith("mtsg")][0]
        sst_row = [l for l in table.splitlines() if l.startswith("sst")][0]
        assert mtsg_row.rstrip().endswith("*")
        assert not sst_row.rstrip().endswith("*")
        assert "1.12" in mtsg_row  # unrounded average 1.125, rendered half-even

    def test_rpt_tied_best_both_marked(self):
        records = self.make_records({
            ("st", "rf"): [2.0, 4.0],
            ("sst", "rf"): [1.8, 3.6],
            ("drs", "rf"): [1.8, 3.6],
        })
        table = render_rpt_table(records)
        for name in ("sst", "drs"):
            row = [l for l in table.splitlines() if l.startswith(name)][0]
            assert row.rstrip().endswith("*")

    def test_rpt_missing_baseline(self):
        records = self.make_records({("sst", "rf"): [2.0, 4.0]})
        with pytest.raises(ValueError, match="missing single-target baseline"):
            render_rpt_table(records)

    def test_arrmse_chart(self):
        records = self.make_records({
            ("st", "rf"): [2.0, 4.0],
            ("st", "svr_l"): [2.4, 4.4],
            ("mtsg", "rf"): [1.9, 3.9],
        })
        csv = render_arrmse_chart_data(records)
        lines = csv.splitlines()
        assert lines[0] == "method,learner,arrmse"
        assert len(lines) == 5  # header + 3 rows + reference
        ref = lines[-1].split(",")
        assert ref[0] == "st_reference"
        assert float(ref[2]) == pytest.approx(3.0)
        assert len(lines[1].split(",")[2].split(".")[1]) >= 4

    def test_rpd_all_models_tied(self):
        records = self.make_records({
            ("st", "rf"): [2.0, 4.0],
            ("sst", "rf"): [2.0, 4.0],
        })
        table = render_rpd_table(records, {"a": 4.2, "b": 8.0})
        assert table.count("All models") == 2

    def test_rpd_single_best_named(self):
        records = self.make_records({
            ("st", "rf"): [2.0, 4.0],
            ("mtsg", "rf"): [1.6, 4.2],
        })
        table = render_rpd_table(records, {"a": 4.2, "b": 8.0})
        row = [l for l in table.splitlines() if l.startswith("a")][0]
        assert "mtsg (rf)" in row and "All models" not in row
        # rpd = 4.2 / 1.6 = 2.625 -> excellent
        assert "2.62" in row and "excellent" in row

    def test_rpd_missing_sd(self):
        records = self.make_records({("st", "rf"): [2.0, 4.0]})
        with pytest.raises(ValueError, match="missing reference SD for target 'b'"):
            render_rpd_table(records, {"a": 4.2})


class TestRecordsIo:
    def test_malformed_rows_located(self, tmp_path):
        config = small_config()
        records = run_experiment(config, dataset=small_dataset())
        save_records(records, config, tmp_path)
        bad = tmp_path / "per_target.csv"
        lines = bad.read_text().splitlines()
        lines[3] = lines[3] + ",extra"
        bad.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match=r"per_target\.csv:4"):
            load_records(tmp_path)

    def test_missing_schema_tag(self, tmp_path):
        (tmp_path / "per_target.csv").write_text("x\n")
        (tmp_path / "aggregate.csv").write_text("x\n")
        with pytest.raises(ValueError, match="missing schema tag"):
            load_records(tmp_path)

    def test_csv_excludes_volatile_fields(self):
        records = [ResultRecord(config_hash="h", method="st", base="rf", pool=(),
                                seed=1, wall_seconds=123.456)]
        per, agg = records_to_csv(records)
        assert "123" not in per and "123" not in agg


class TestBenchmarkGrid:
    def test_fourteen_entries(self):
        grid = experiment.benchmark_grid(seed=3)
        assert len(grid) == 14
        methods = {(s.method, s.base.kind) for s in grid}
        assert ("mtsg", "rf") in methods and ("st", "svr_r") in methods
        for s in grid:
            if s.method in ("mtas", "mtsg"):
                assert tuple(p.kind for p in s.level0_pool) == ("rf", "svr_r")

    def test_render_benchmark_table(self):
        grid = experiment.benchmark_grid(seed=3)
        records = [ResultRecord(config_hash="h", method=s.method, base=s.base.kind,
                                pool=(), seed=1, arrmse=0.5)
                   for s in grid]
        table = experiment.render_benchmark_table(records, "enb")
        lines = table.splitlines()
        assert lines[1].startswith("enb")
        assert lines[1].count("0.5000") == 14
