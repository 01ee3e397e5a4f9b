"""Command-line entry point.

Subcommands: stats, split, train, experiment, compare, sample-trace,
synth. Every config key doubles as a flag (``--train.lr 0.003``); the
NEGSEQ_CONFIG environment variable may point at a config file.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import datagen, runner
from .model import SeqModel
from .pipeline import BatchGenerator
from .samplers import build_negatives, trace_rows


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="negseq",
        description="Negative-sampling experiments for sequential "
                    "recommendation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
            ("stats", "dataset report: cohort shares, MPU, histogram"),
            ("split", "emit temporal split manifest and case files"),
            ("train", "single training run, saves best checkpoint"),
            ("experiment", "learning-rate sweep x seeded repeats"),
            ("compare", "PopRec + all six methods, one results table"),
            ("sample-trace", "dump one batch's negative candidates"),
            ("synth", "generate a synthetic interaction log")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None,
                       help="key=value config file")
        p.add_argument("--out-dir", default="out", help="output directory")
        if name == "synth":
            p.add_argument("--users", type=int, default=800)
            p.add_argument("--items", type=int, default=1500)
            p.add_argument("--mean-len", type=int, default=80)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--path", required=True)
    return parser


def _collect_overrides(extras):
    overrides = {}
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or "." not in token:
            raise config_mod.ConfigError(f"unrecognized argument {token!r}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise config_mod.ConfigError(f"flag {token!r} needs a value")
            key, value = token[2:], extras[i + 1]
            i += 2
        overrides[key] = value
    return overrides


def _cmd_stats(cfg, out_dir):
    data = runner.prepare_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    runner._write_stats_files(data, out_dir)
    runner.write_manifest(out_dir)
    print(json.dumps({k: v for k, v in data.stats.items()
                      if k != "histogram"}, indent=1, sort_keys=True))
    return 0


def _cmd_split(cfg, out_dir):
    data = runner.prepare_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    t_train, t_val = data.split.boundaries
    manifest = {
        "t_train": t_train,
        "t_val": t_val,
        "train_users": data.split.train.num_users,
        "train_interactions": data.split.train.interaction_count(),
        "val_cases": len(data.split.val_cases),
        "test_cases": len(data.split.test_cases),
        "num_items": data.dataset.num_items,
    }
    runner.write_json(os.path.join(out_dir, "split_manifest.json"),
                      manifest)
    for split_name, cases in (("val", data.split.val_cases),
                              ("test", data.split.test_cases)):
        runner.write_csv(
            os.path.join(out_dir, f"{split_name}_cases.csv"),
            ("user", "history_len", "target", "target_ts"),
            [{"user": c.user, "history_len": len(c.history),
              "target": c.target, "target_ts": c.target_ts}
             for c in cases])
    runner.write_manifest(out_dir)
    print(json.dumps(manifest, indent=1, sort_keys=True))
    return 0


def _cmd_train(cfg, out_dir):
    data = runner.prepare_data(cfg)
    os.makedirs(os.path.join(out_dir, "logs"), exist_ok=True)
    lr = cfg["train.lr"][0]
    method = cfg["sampler.method"]
    result, record = runner.run_single(cfg, data, method, lr,
                                       cfg["train.seed"])
    model = SeqModel(config_mod.model_config(cfg, data.dataset.num_items),
                     seed=cfg["train.seed"])
    model.restore(result.best_params)
    model.save(os.path.join(out_dir, "model.ckpt"))
    with open(os.path.join(out_dir, "logs", "train.jsonl"), "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    runner.write_json(os.path.join(out_dir, "test_record.json"),
                      {"method": method, "lr": lr,
                       "best_epoch": result.best_epoch,
                       "best_val_ndcg": result.best_val_ndcg,
                       "test": record.to_dict()})
    runner.write_manifest(out_dir)
    print(f"best epoch {result.best_epoch}  "
          f"val ndcg@{cfg['eval.k']} {result.best_val_ndcg:.4f}  "
          f"test ndcg@{cfg['eval.k']} {record.ndcg_total:.4f}")
    return 0


def _cmd_sample_trace(cfg, out_dir):
    data = runner.prepare_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    sampler_cfg = config_mod.sampler_config(cfg)
    rng = np.random.default_rng([cfg["train.seed"], 1, 0])
    gen = BatchGenerator(data.split.train, cfg["train.batch_size"],
                         sampler_cfg, data.pop, rng,
                         cfg["model.max_seq_len"])
    batch = gen.next_batch()
    neg = batch.negatives
    if sampler_cfg.method.value.startswith("adaptive"):
        model = SeqModel(
            config_mod.model_config(cfg, data.dataset.num_items),
            seed=cfg["train.seed"])

        def scorer(seqs, pool):
            fwd = model.forward(seqs, train_mode=False)
            return model.score_candidates(fwd.causal, pool)

        neg = build_negatives(sampler_cfg, batch.seqs, batch.targets,
                              [np.unique(data.split.train.sequences[
                                  int(u)].items) for u in batch.users],
                              data.pop, np.random.default_rng(
                                  [cfg["train.seed"], 1, 0]),
                              model_scorer=scorer)
    path = os.path.join(out_dir, "sample_trace.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("user", "position", "candidate", "excluded",
                         "retained"))
        writer.writerows(trace_rows(neg, batch.users))
    print(f"wrote {path}")
    return 0


def _cmd_synth(args):
    interactions = datagen.generate_interactions(
        num_users=args.users, num_items=args.items,
        mean_len=args.mean_len, seed=args.seed)
    datagen.write_tsv(interactions, args.path)
    print(f"wrote {len(interactions)} interactions to {args.path}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        if args.command == "synth":
            if extras:
                raise config_mod.ConfigError(
                    f"unrecognized arguments: {extras}")
            return _cmd_synth(args)
        overrides = _collect_overrides(extras)
        cfg = config_mod.load_config(args.config, overrides)
        if args.command == "stats":
            return _cmd_stats(cfg, args.out_dir)
        if args.command == "split":
            return _cmd_split(cfg, args.out_dir)
        if args.command == "train":
            return _cmd_train(cfg, args.out_dir)
        if args.command == "experiment":
            return runner.run_experiment(cfg, args.out_dir)
        if args.command == "compare":
            return runner.compare_methods(cfg, args.out_dir)
        if args.command == "sample-trace":
            return _cmd_sample_trace(cfg, args.out_dir)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
