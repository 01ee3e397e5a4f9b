"""Experiment orchestration: seeded repeats, sweeps, and result files.

Result files under the output directory are byte-deterministic for a
fixed config and base seed; anything carrying wall-clock time goes to
``logs/`` and is listed in the manifest's volatile section instead. Run r
always uses ``base_seed + r`` so repeats are independent of execution
order.
"""

import csv
import hashlib
import json
import os
from dataclasses import dataclass

from . import config as config_mod
from . import metrics as metrics_mod
from .data import (assign_cohorts, build_dataset, build_popularity,
                   dataset_stats, load_interactions, temporal_split)
from .model import SeqModel, TrainingFault
from .pipeline import evaluate_cases, train_run
from .samplers import Method

RUN_CSV_FIELDS = (
    "method", "lr", "run", "seed", "status", "best_epoch", "best_val_ndcg",
    "hr_total", "hr_head", "hr_mid", "hr_tail",
    "ndcg_total", "ndcg_head", "ndcg_mid", "ndcg_tail", "balance",
)

COMPARE_SLATE = ("poprec",) + tuple(m.value for m in Method)


@dataclass
class PreparedData:
    dataset: object
    split: object
    pop: object
    cohorts: object
    stats: dict


def prepare_data(cfg):
    """Load, split and profile the dataset once; shared across repeats."""
    interactions, _ = load_interactions(cfg["data.path"],
                                        config_mod.input_format(cfg))
    dataset = build_dataset(interactions, min_len=cfg["data.min_len"])
    split = temporal_split(dataset, cfg["split.q_train"],
                           cfg["split.q_val"])
    pop = build_popularity(split.train)
    cohorts = assign_cohorts(pop, cfg["cohorts.theta_head"],
                             cfg["cohorts.theta_mid"])
    stats = dataset_stats(pop, cohorts, split.train)
    return PreparedData(dataset=dataset, split=split, pop=pop,
                        cohorts=cohorts, stats=stats)


def run_single(cfg, data, method, lr, seed):
    """One seeded training run; returns (TrainResult, MetricsRecord)."""
    model = SeqModel(config_mod.model_config(cfg, data.dataset.num_items),
                     seed=seed)
    result = train_run(
        data.split, model, config_mod.sampler_config(cfg, method),
        config_mod.buffer_osf(cfg, method),
        epochs=cfg["train.epochs"], eval_every=cfg["train.eval_every"],
        lr=lr, batch_size=cfg["train.batch_size"], seed=seed,
        eval_k=cfg["eval.k"], exclude_history=cfg["eval.exclude_history"],
        threaded=cfg["train.threaded"], cohorts=data.cohorts, pop=data.pop)
    return result, result.test_record


def evaluate_poprec(cfg, data):
    """The no-training popularity baseline on the shared test cases."""
    ranked = metrics_mod.poprec(data.split.train, cfg["eval.k"],
                                pop=data.pop)
    cases = [(ranked, case.target) for case in data.split.test_cases]
    return metrics_mod.cohort_metrics(cases, data.cohorts, cfg["eval.k"])


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(f)) for f in fieldnames])


def _hash_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, volatile_prefixes=("logs",)):
    """List every output file with its sha256, split results/volatile."""
    results, volatile = {}, {}
    for root, _, names in os.walk(out_dir):
        for name in sorted(names):
            if name == "manifest.json":
                continue
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out_dir)
            bucket = volatile if rel.split(os.sep)[0] in volatile_prefixes \
                else results
            bucket[rel.replace(os.sep, "/")] = _hash_file(path)
    manifest = {"results": results, "volatile": volatile}
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _config_echo(cfg, out_dir):
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        text = (",".join(repr(v) for v in value)
                if isinstance(value, tuple) else _fmt(value))
        lines.append(f"{key} = {text}")
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _run_rows(method, lr, run_idx, seed, result, record):
    row = {"method": method, "lr": lr, "run": run_idx, "seed": seed,
           "status": "ok", "best_epoch": result.best_epoch,
           "best_val_ndcg": result.best_val_ndcg}
    for name in ("hr_total", "hr_head", "hr_mid", "hr_tail", "ndcg_total",
                 "ndcg_head", "ndcg_mid", "ndcg_tail", "balance"):
        row[name] = getattr(record, name)
    return row


def _write_stats_files(data, out_dir):
    write_json(os.path.join(out_dir, "stats.json"), data.stats)
    write_csv(os.path.join(out_dir, "fig3_popularity.csv"),
              ("rank", "normalized_freq"),
              [{"rank": r, "normalized_freq": f}
               for r, f in data.stats["histogram"]])


def run_methods(cfg, out_dir, methods):
    """Shared engine for `experiment` (one method) and `compare` (slate).

    Returns (per-run rows, aggregates, n_failed). PopRec is deterministic
    and runs once regardless of the repeat count.
    """
    data = prepare_data(cfg)
    os.makedirs(os.path.join(out_dir, "logs"), exist_ok=True)
    _write_stats_files(data, out_dir)

    rows, aggregates, scatter = [], [], []
    n_failed = 0
    for method in methods:
        lrs = cfg["train.lr"] if method != "poprec" else (None,)
        for lr in lrs:
            records = []
            if method == "poprec":
                record = evaluate_poprec(cfg, data)
                records.append(record)
                rows.append({"method": method, "lr": None, "run": 0,
                             "seed": None, "status": "ok",
                             "best_epoch": None, "best_val_ndcg": None,
                             **{k: getattr(record, k) for k in
                                RUN_CSV_FIELDS[7:]}})
                scatter.append({"method": method, "run": 0,
                                "ndcg10_total": record.ndcg_total,
                                "balance": record.balance})
            else:
                for run_idx in range(cfg["train.repeats"]):
                    seed = cfg["train.seed"] + run_idx
                    try:
                        result, record = run_single(cfg, data, method, lr,
                                                    seed)
                    except TrainingFault as fault:
                        n_failed += 1
                        rows.append({"method": method, "lr": lr,
                                     "run": run_idx, "seed": seed,
                                     "status": f"failed[{fault}]"})
                        continue
                    records.append(record)
                    rows.append(_run_rows(method, lr, run_idx, seed,
                                          result, record))
                    scatter.append({"method": method, "run": run_idx,
                                    "ndcg10_total": record.ndcg_total,
                                    "balance": record.balance})
                    log_name = f"run_{method}_{lr}_{run_idx}.jsonl"
                    with open(os.path.join(out_dir, "logs", log_name),
                              "w") as fh:
                        for entry in result.log:
                            fh.write(json.dumps(entry, sort_keys=True)
                                     + "\n")
            if records:
                mean, std = metrics_mod.aggregate_runs(records)
                aggregates.append({"method": method, "lr": lr,
                                   "n_runs": len(records),
                                   "mean": mean.to_dict(),
                                   "std": std.to_dict()})

    write_csv(os.path.join(out_dir, "runs.csv"), RUN_CSV_FIELDS, rows)
    with open(os.path.join(out_dir, "runs.jsonl"), "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    write_json(os.path.join(out_dir, "aggregates.json"), aggregates)
    write_csv(os.path.join(out_dir, "fig4_scatter.csv"),
              ("method", "run", "ndcg10_total", "balance"), scatter)
    _config_echo(cfg, out_dir)
    return rows, aggregates, n_failed


def run_experiment(cfg, out_dir):
    """Sweep learning rates x seeded repeats for the configured method.

    Exit status is non-zero when any run failed.
    """
    os.makedirs(out_dir, exist_ok=True)
    _, _, n_failed = run_methods(cfg, out_dir, (cfg["sampler.method"],))
    write_manifest(out_dir)
    return 1 if n_failed else 0


def _cell(mean, std, present):
    if not present:
        return "—"
    return f"{100.0 * mean:.2f}±{100.0 * std:.2f}"


def compare_methods(cfg, out_dir, methods=COMPARE_SLATE):
    """Full-slate comparison table in the shape of the headline results.

    One row per method (PopRec plus the six samplers) with per-cohort
    HR@k / NDCG@k as "mean±std" percentages and the balance column.
    """
    os.makedirs(out_dir, exist_ok=True)
    if len(cfg["train.lr"]) != 1:
        raise config_mod.ConfigError(
            "compare expects a single learning rate")
    _, aggregates, n_failed = run_methods(cfg, out_dir, methods)

    table = []
    for agg in aggregates:
        mean, std = agg["mean"], agg["std"]
        row = {"method": agg["method"], "n_runs": agg["n_runs"]}
        for name in ("hr_total", "hr_head", "hr_mid", "hr_tail",
                     "ndcg_total", "ndcg_head", "ndcg_mid", "ndcg_tail"):
            row[name] = _cell(mean[name], std[name],
                              mean[name] is not None)
        if mean["balance"] is None:
            row["balance"] = "—"
        else:
            row["balance"] = f"{mean['balance']:.2f}±" \
                             f"{std['balance']:.2f}"
        table.append(row)
    write_csv(os.path.join(out_dir, "compare.csv"),
              ("method", "n_runs", "hr_total", "hr_head", "hr_mid",
               "hr_tail", "ndcg_total", "ndcg_head", "ndcg_mid",
               "ndcg_tail", "balance"), table)
    write_manifest(out_dir)
    return 1 if n_failed else 0
