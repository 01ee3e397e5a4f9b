"""Experiment runner: config handling, output files, determinism."""

import csv
import json
import os

import numpy as np
import pytest

from negseq import cli
from negseq import config as config_mod
from negseq import datagen, runner
from negseq.metrics import MetricsRecord, aggregate_runs


@pytest.fixture(scope="module")
def data_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synth.tsv"
    interactions = datagen.generate_interactions(
        num_users=50, num_items=90, mean_len=25, seed=7)
    datagen.write_tsv(interactions, path)
    return str(path)


def tiny_overrides(data_path, **extra):
    cfg = {
        "data.path": data_path,
        "model.embed_dim": "16",
        "model.num_blocks": "1",
        "model.max_seq_len": "10",
        "model.dropout": "0.1",
        "sampler.n_negatives": "8",
        "sampler.k_retain": "4",
        "sampler.batch_to_random_ratio": "none",
        "train.epochs": "2",
        "train.eval_every": "1",
        "train.batch_size": "25",
        "train.repeats": "2",
        "train.lr": "0.001",
    }
    cfg.update(extra)
    return cfg


class TestConfig:
    def test_defaults_plus_file_plus_overrides(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# comment\ntrain.epochs = 7\n"
                        "sampler.method = batch  # trailing\n")
        cfg = config_mod.load_config(str(path),
                                     {"train.lr": "0.01,0.001"})
        assert cfg["train.epochs"] == 7
        assert cfg["sampler.method"] == "batch"
        assert cfg["train.lr"] == (0.01, 0.001)
        assert cfg["eval.k"] == 10

    def test_unknown_key_rejected(self):
        with pytest.raises(config_mod.ConfigError, match="unknown"):
            config_mod.load_config(overrides={"nope.key": "1"})

    def test_bool_and_none_parsing(self):
        cfg = config_mod.load_config(overrides={
            "eval.exclude_history": "false", "buffer.osf": "none"})
        assert cfg["eval.exclude_history"] is False
        assert cfg["buffer.osf"] is None

    def test_env_var_supplies_path(self, tmp_path, monkeypatch):
        path = tmp_path / "env.cfg"
        path.write_text("train.epochs = 3\n")
        monkeypatch.setenv(config_mod.CONFIG_ENV_VAR, str(path))
        assert config_mod.load_config()["train.epochs"] == 3

    def test_method_default_osf(self):
        cfg = config_mod.load_config()
        assert config_mod.buffer_osf(cfg, "random") == 1
        assert config_mod.buffer_osf(cfg, "mixed") == 4
        assert config_mod.buffer_osf(
            config_mod.load_config(overrides={"buffer.osf": "2"}),
            "mixed") == 2


class TestRunExperiment:
    def test_outputs_and_counts(self, data_path, tmp_path):
        cfg = config_mod.load_config(
            overrides=tiny_overrides(data_path, **{"train.lr":
                                                   "0.001,0.003"}))
        out = tmp_path / "exp"
        status = runner.run_experiment(cfg, str(out))
        assert status == 0
        with open(out / "runs.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4   # 2 lrs x 2 repeats
        aggregates = json.load(open(out / "aggregates.json"))
        assert len(aggregates) == 2
        assert (out / "manifest.json").exists()
        assert (out / "fig3_popularity.csv").exists()
        with open(out / "fig4_scatter.csv") as fh:
            scatter = list(csv.DictReader(fh))
        assert len(scatter) == 4

    def test_aggregates_recomputable_from_runs_csv(self, data_path,
                                                   tmp_path):
        cfg = config_mod.load_config(overrides=tiny_overrides(data_path))
        out = tmp_path / "exp"
        runner.run_experiment(cfg, str(out))
        with open(out / "runs.csv") as fh:
            rows = [r for r in csv.DictReader(fh) if r["status"] == "ok"]
        records = []
        for row in rows:
            kwargs = {}
            for name in ("hr_total", "hr_head", "hr_mid", "hr_tail",
                         "ndcg_total", "ndcg_head", "ndcg_mid",
                         "ndcg_tail", "balance"):
                kwargs[name] = float(row[name]) if row[name] else None
            records.append(MetricsRecord(k=10, **kwargs))
        mean, std = aggregate_runs(records)
        emitted = json.load(open(out / "aggregates.json"))[0]
        for name in ("hr_total", "ndcg_total", "balance"):
            assert emitted["mean"][name] == getattr(mean, name)
            assert emitted["std"][name] == getattr(std, name)

    def test_determinism_manifest_hashes_equal(self, data_path, tmp_path):
        cfg = config_mod.load_config(overrides=tiny_overrides(data_path))
        manifests = []
        for name in ("a", "b"):
            out = tmp_path / name
            runner.run_experiment(cfg, str(out))
            manifests.append(json.load(open(out / "manifest.json")))
        assert manifests[0]["results"] == manifests[1]["results"]
        assert set(manifests[0]["volatile"]) == set(
            manifests[1]["volatile"])

    def test_seed_isolation_run_records_independent(self, data_path,
                                                    tmp_path):
        base = config_mod.load_config(overrides=tiny_overrides(data_path))
        solo = config_mod.load_config(overrides=tiny_overrides(
            data_path, **{"train.repeats": "1", "train.seed": "1"}))
        out_all, out_solo = tmp_path / "all", tmp_path / "solo"
        runner.run_experiment(base, str(out_all))
        runner.run_experiment(solo, str(out_solo))
        rows_all = list(csv.DictReader(open(out_all / "runs.csv")))
        rows_solo = list(csv.DictReader(open(out_solo / "runs.csv")))
        # run 1 of the 2-repeat sweep == run 0 of a fresh seed-1 experiment
        a = {k: v for k, v in rows_all[1].items()
             if k not in ("run", "seed")}
        b = {k: v for k, v in rows_solo[0].items()
             if k not in ("run", "seed")}
        assert a == b

    def test_failed_run_nonzero_exit_and_excluded(self, data_path,
                                                  tmp_path):
        cfg = config_mod.load_config(overrides=tiny_overrides(
            data_path, **{"train.lr": "1e200", "train.repeats": "1"}))
        out = tmp_path / "boom"
        with np.errstate(over="ignore", invalid="ignore"):
            status = runner.run_experiment(cfg, str(out))
        assert status == 1
        rows = list(csv.DictReader(open(out / "runs.csv")))
        assert rows[0]["status"].startswith("failed")
        assert json.load(open(out / "aggregates.json")) == []


class TestCompare:
    def test_slate_emits_seven_method_rows(self, data_path, tmp_path):
        cfg = config_mod.load_config(overrides=tiny_overrides(
            data_path, **{"train.repeats": "1"}))
        out = tmp_path / "cmp"
        status = runner.compare_methods(cfg, str(out))
        assert status == 0
        rows = list(csv.DictReader(open(out / "compare.csv")))
        assert [r["method"] for r in rows] == [
            "poprec", "random", "popularity", "batch", "mixed",
            "adaptive", "adaptive_mixed"]
        poprec_row = rows[0]
        assert poprec_row["hr_total"] != ""

    def test_multiple_lrs_rejected(self, data_path, tmp_path):
        cfg = config_mod.load_config(overrides=tiny_overrides(
            data_path, **{"train.lr": "0.1,0.2"}))
        with pytest.raises(config_mod.ConfigError):
            runner.compare_methods(cfg, str(tmp_path / "x"))


class TestCli:
    def test_stats_and_split_commands(self, data_path, tmp_path, capsys):
        out = tmp_path / "stats"
        assert cli.main(["stats", "--out-dir", str(out),
                         "--data.path", data_path]) == 0
        assert (out / "stats.json").exists()
        captured = capsys.readouterr()
        assert "cohorts" in captured.out

        out2 = tmp_path / "split"
        assert cli.main(["split", "--out-dir", str(out2),
                         "--data.path", data_path]) == 0
        manifest = json.load(open(out2 / "split_manifest.json"))
        assert manifest["val_cases"] > 0
        assert (out2 / "val_cases.csv").exists()
        assert (out2 / "test_cases.csv").exists()

    def test_train_command_saves_checkpoint(self, data_path, tmp_path):
        out = tmp_path / "train"
        argv = ["train", "--out-dir", str(out), "--data.path", data_path]
        for key, value in tiny_overrides(data_path,
                                         **{"train.repeats": "1"}).items():
            argv += [f"--{key}", value]
        assert cli.main(argv) == 0
        assert (out / "model.ckpt").exists()
        assert (out / "test_record.json").exists()

    def test_sample_trace_command(self, data_path, tmp_path):
        out = tmp_path / "trace"
        argv = ["sample-trace", "--out-dir", str(out),
                "--data.path", data_path, "--train.batch_size", "4",
                "--model.max_seq_len", "6", "--sampler.n_negatives", "5"]
        assert cli.main(argv) == 0
        with open(out / "sample_trace.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4 * 6 * 5
        assert set(rows[0]) == {"user", "position", "candidate",
                                "excluded", "retained"}

    def test_synth_command(self, tmp_path):
        path = tmp_path / "gen.tsv"
        assert cli.main(["synth", "--path", str(path), "--users", "10",
                         "--items", "20", "--mean-len", "8"]) == 0
        assert path.exists()
        assert len(path.read_text().splitlines()) > 10

    def test_bad_flag_is_config_error(self, data_path):
        assert cli.main(["stats", "--data.path", data_path,
                         "--bogus.key", "1"]) == 2
