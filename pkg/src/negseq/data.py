"""Interaction-log ingestion, temporal splitting, popularity and cohorts.

All functions here are pure: identical inputs produce identical outputs,
so splits, popularity tables and cohort maps can be shared across repeat
runs and threads.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np


class FormatError(ValueError):
    """Input file could not be parsed into any valid interaction."""


class DegenerateSplitError(ValueError):
    """A temporal split produced an empty train/val/test part."""


@dataclass(frozen=True)
class Interaction:
    user: object
    item: object
    timestamp: int


@dataclass(frozen=True)
class InputFormat:
    """Column layout of a delimited interaction log.

    kind: "tsv" (whitespace-delimited), "csv", or "userlines"
    (one user per line, tokens "item:timestamp"). Column indices apply
    to tsv/csv only.
    """
    kind: str = "tsv"
    user_col: int = 0
    item_col: int = 1
    time_col: int = 2
    skip_header: bool = False


@dataclass
class UserSequence:
    items: np.ndarray      # int64 internal ids, time-ascending
    timestamps: np.ndarray # int64, same length

    def __len__(self):
        return int(self.items.size)


@dataclass
class Dataset:
    """Contiguous-id view of the interaction log.

    Internal item ids are 1..num_items (0 = padding); internal user
    indices are keys of ``sequences``. num_items is the size of the id
    space, which a filtered view (e.g. the train split) shares with its
    parent even when some ids do not occur in it.
    """
    sequences: dict
    num_items: int
    num_users: int
    user_ids: list          # index -> external user id
    item_ids: list          # id -> external item id (slot 0 unused)
    user_index: dict = field(repr=False)
    item_index: dict = field(repr=False)

    def interaction_count(self):
        return sum(len(s) for s in self.sequences.values())


@dataclass(frozen=True)
class EvalCase:
    user: int
    history: np.ndarray   # internal item ids, time-ascending
    target: int
    target_ts: int


@dataclass
class Split:
    train: Dataset
    val_cases: list
    test_cases: list
    boundaries: tuple     # (t_train, t_val)


@dataclass
class PopularityTable:
    """Per-item train-set interaction counts and sampling weights."""
    freq: np.ndarray            # int64 [num_items + 1], slot 0 = 0
    total_interactions: int

    def weights(self, gamma):
        """Normalized weights proportional to freq**gamma over freq > 0."""
        f = self.freq.astype(np.float64)
        w = np.where(self.freq > 0, f ** float(gamma), 0.0)
        total = w.sum()
        if total <= 0:
            raise ValueError("popularity table has no observed items")
        return w / total


class Cohort(enum.IntEnum):
    HEAD = 0
    MID = 1
    TAIL = 2
    UNSEEN = 3


@dataclass
class CohortMap:
    labels: np.ndarray    # int8 [num_items + 1], slot 0 = UNSEEN
    thresholds: tuple     # (theta_head, theta_mid)

    def items_in(self, cohort):
        ids = np.flatnonzero(self.labels == int(cohort))
        return ids[ids > 0]


def _parse_ts(token):
    try:
        return int(token)
    except ValueError:
        return int(float(token))


def load_interactions(path, fmt=InputFormat()):
    """Parse an interaction log into (interactions, skipped_row_count).

    Malformed rows are skipped and counted; a file with zero valid rows
    raises FormatError. I/O failures propagate.
    """
    interactions = []
    skipped = 0
    with open(path, "r", newline="") as fh:
        if fmt.kind == "csv":
            rows = csv.reader(fh)
        else:
            rows = (line.split() for line in fh)
        for lineno, row in enumerate(rows):
            if fmt.skip_header and lineno == 0:
                continue
            if not row:
                continue
            try:
                if fmt.kind == "userlines":
                    user = lineno + 1
                    parsed = []
                    for token in row:
                        item, ts = token.rsplit(":", 1)
                        parsed.append(Interaction(user, item, _parse_ts(ts)))
                    if not parsed:
                        raise ValueError("empty user line")
                    interactions.extend(parsed)
                else:
                    interactions.append(Interaction(
                        row[fmt.user_col], row[fmt.item_col],
                        _parse_ts(row[fmt.time_col])))
            except (ValueError, IndexError):
                skipped += 1
    if not interactions:
        raise FormatError(f"no valid interactions in {path!r} "
                          f"({skipped} rows skipped)")
    return interactions, skipped


def build_dataset(interactions, min_len=3):
    """Group interactions into per-user time-sorted sequences.

    Users with fewer than ``min_len`` interactions are dropped before
    internal ids are assigned; ids then follow first appearance in input
    order. Timestamp ties keep input order (stable sort).
    """
    if not interactions:
        raise ValueError("no interactions given")
    per_user_count = {}
    for it in interactions:
        per_user_count[it.user] = per_user_count.get(it.user, 0) + 1
    kept = [it for it in interactions if per_user_count[it.user] >= min_len]
    if not kept:
        raise ValueError(f"dataset too sparse: no user has >= {min_len} "
                         "interactions")

    user_index, item_index = {}, {}
    user_ids, item_ids = [], [None]
    raw = {}
    for it in kept:
        if it.user not in user_index:
            user_index[it.user] = len(user_ids)
            user_ids.append(it.user)
            raw[user_index[it.user]] = ([], [])
        if it.item not in item_index:
            item_index[it.item] = len(item_ids)
            item_ids.append(it.item)
        items, stamps = raw[user_index[it.user]]
        items.append(item_index[it.item])
        stamps.append(it.timestamp)

    sequences = {}
    for u, (items, stamps) in raw.items():
        order = np.argsort(np.asarray(stamps, dtype=np.int64),
                           kind="stable")
        sequences[u] = UserSequence(
            items=np.asarray(items, dtype=np.int64)[order],
            timestamps=np.asarray(stamps, dtype=np.int64)[order])
    return Dataset(sequences=sequences, num_items=len(item_ids) - 1,
                   num_users=len(user_ids), user_ids=user_ids,
                   item_ids=item_ids, user_index=user_index,
                   item_index=item_index)


def temporal_split(dataset, q_train=0.8, q_val=0.9):
    """Split by global timestamp quantiles shared across all users.

    Train keeps interactions with ts <= t_train. Each user contributes at
    most one val case (history <= t_train, target = earliest interaction
    in (t_train, t_val]) and one test case (history <= t_val, target =
    earliest interaction after t_val). Boundary ties go to the earlier
    side.
    """
    if not (0 < q_train < q_val < 1):
        raise ValueError("need 0 < q_train < q_val < 1")
    all_ts = np.concatenate([s.timestamps for s in
                             dataset.sequences.values()])
    t_train = float(np.quantile(all_ts, q_train))
    t_val = float(np.quantile(all_ts, q_val))

    train_seqs = {}
    val_cases, test_cases = [], []
    for u in sorted(dataset.sequences):
        seq = dataset.sequences[u]
        ts = seq.timestamps
        n_train = int(np.searchsorted(ts, t_train, side="right"))
        n_val = int(np.searchsorted(ts, t_val, side="right"))
        if n_train > 0:
            train_seqs[u] = UserSequence(items=seq.items[:n_train].copy(),
                                         timestamps=ts[:n_train].copy())
            if n_val > n_train:
                val_cases.append(EvalCase(
                    user=u, history=seq.items[:n_train].copy(),
                    target=int(seq.items[n_train]),
                    target_ts=int(ts[n_train])))
        if n_val > 0 and n_val < len(seq):
            test_cases.append(EvalCase(
                user=u, history=seq.items[:n_val].copy(),
                target=int(seq.items[n_val]),
                target_ts=int(ts[n_val])))

    if not train_seqs or not val_cases or not test_cases:
        raise DegenerateSplitError(
            f"degenerate split: t_train={t_train} t_val={t_val} "
            f"train_users={len(train_seqs)} val_cases={len(val_cases)} "
            f"test_cases={len(test_cases)}")
    train = Dataset(sequences=train_seqs, num_items=dataset.num_items,
                    num_users=len(train_seqs), user_ids=dataset.user_ids,
                    item_ids=dataset.item_ids,
                    user_index=dataset.user_index,
                    item_index=dataset.item_index)
    return Split(train=train, val_cases=val_cases, test_cases=test_cases,
                 boundaries=(t_train, t_val))


def build_popularity(train):
    """Count per-item train interactions (every occurrence counts)."""
    freq = np.zeros(train.num_items + 1, dtype=np.int64)
    for seq in train.sequences.values():
        np.add.at(freq, seq.items, 1)
    total = int(freq.sum())
    if total == 0:
        raise ValueError("train split is empty")
    return PopularityTable(freq=freq, total_interactions=total)


def assign_cohorts(pop, theta_head=0.5, theta_mid=0.8):
    """Label items Head/Mid/Tail by cumulative interaction share.

    Items are ranked by frequency descending (ties by id ascending); Head
    is the minimal prefix reaching theta_head of all interactions, Mid
    extends the prefix to theta_mid, remaining observed items are Tail and
    zero-frequency items are Unseen.
    """
    if not (0 < theta_head < theta_mid < 1):
        raise ValueError("need 0 < theta_head < theta_mid < 1")
    ids = np.arange(1, pop.freq.size, dtype=np.int64)
    order = ids[np.lexsort((ids, -pop.freq[ids]))]
    share = np.cumsum(pop.freq[order]) / pop.total_interactions
    head_end = int(np.searchsorted(share, theta_head, side="left")) + 1
    mid_end = int(np.searchsorted(share, theta_mid, side="left")) + 1

    labels = np.full(pop.freq.size, int(Cohort.UNSEEN), dtype=np.int8)
    labels[order[:head_end]] = int(Cohort.HEAD)
    labels[order[head_end:mid_end]] = int(Cohort.MID)
    labels[order[mid_end:]] = int(Cohort.TAIL)
    labels[pop.freq == 0] = int(Cohort.UNSEEN)
    labels[0] = int(Cohort.UNSEEN)
    return CohortMap(labels=labels, thresholds=(theta_head, theta_mid))


def dataset_stats(pop, cohorts, train):
    """Cohort-level item counts, shares and MPU, plus a frequency histogram.

    MPU is the median over a cohort's items of the percentage of train
    users who interacted with that item; absent (None) for empty cohorts.
    """
    if pop.freq.size != cohorts.labels.size:
        raise ValueError("popularity table and cohort map disagree on the "
                         "item universe")
    distinct_users = np.zeros(pop.freq.size, dtype=np.int64)
    for seq in train.sequences.values():
        distinct_users[np.unique(seq.items)] += 1

    num_items = pop.freq.size - 1
    report = {
        "num_users": train.num_users,
        "num_items": num_items,
        "total_interactions": pop.total_interactions,
        "cohorts": {},
    }
    for cohort in Cohort:
        ids = cohorts.items_in(cohort)
        entry = {
            "items": int(ids.size),
            "item_share_pct": 100.0 * ids.size / num_items,
        }
        if ids.size:
            entry["mpu_pct"] = float(np.median(
                100.0 * distinct_users[ids] / train.num_users))
        else:
            entry["mpu_pct"] = None
        report["cohorts"][cohort.name.lower()] = entry

    observed = np.sort(pop.freq[pop.freq > 0])[::-1]
    report["histogram"] = [
        [rank + 1, float(f) / pop.total_interactions]
        for rank, f in enumerate(observed)
    ]
    return report
