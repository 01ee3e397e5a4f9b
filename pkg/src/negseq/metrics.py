"""Full-corpus, popularity-stratified evaluation metrics.

Hit rate and NDCG are computed per evaluation case against a ranked
top-k list retrieved from the whole catalog, then broken out by the
popularity cohort of the case's label item. Balance summarizes how evenly
accuracy spreads over the head/mid/tail cohorts.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Cohort, build_popularity

_METRIC_FIELDS = (
    "hr_total", "hr_head", "hr_mid", "hr_tail",
    "ndcg_total", "ndcg_head", "ndcg_mid", "ndcg_tail",
    "balance",
)


@dataclass(frozen=True)
class RankedList:
    """Top-k retrieval result: unique item ids, best first, length <= k."""
    items: tuple
    k: int

    def __post_init__(self):
        if len(self.items) > self.k:
            raise ValueError("ranked list longer than its cutoff")
        if len(set(self.items)) != len(self.items):
            raise ValueError("ranked list contains duplicates")

    def rank_of(self, label):
        """1-based rank of label, or None when absent."""
        try:
            return self.items.index(label) + 1
        except ValueError:
            return None


@dataclass
class MetricsRecord:
    """Total and per-cohort HR@k / NDCG@k plus Balance for one case set.

    Absent values (empty cohorts, undefined balance) are None, never 0.
    HR/NDCG are fractions; balance is on the 0..100 percent scale.
    """
    k: int
    hr_total: float = None
    hr_head: float = None
    hr_mid: float = None
    hr_tail: float = None
    ndcg_total: float = None
    ndcg_head: float = None
    ndcg_mid: float = None
    ndcg_tail: float = None
    balance: float = None
    balance_degenerate: bool = False
    case_counts: dict = field(default_factory=dict)
    n_runs: int = 1

    def to_dict(self):
        out = {"k": self.k, "n_runs": self.n_runs,
               "case_counts": dict(self.case_counts),
               "balance": self.balance,
               "balance_degenerate": self.balance_degenerate}
        for name in _METRIC_FIELDS:
            if name == "balance":
                continue
            value = getattr(self, name)
            out[name] = value
            out[name + "_pct"] = None if value is None else 100.0 * value
        return out


def hit_rate(cases):
    """Fraction of (RankedList, label) cases whose label made the list."""
    if not cases:
        return None
    hits = sum(1 for ranked, label in cases
               if ranked.rank_of(label) is not None)
    return hits / len(cases)


def ndcg(cases):
    """Mean single-label NDCG@k: 1/log2(rank + 1), 0 when off the list."""
    if not cases:
        return None
    total = 0.0
    for ranked, label in cases:
        rank = ranked.rank_of(label)
        if rank is not None:
            total += 1.0 / math.log2(rank + 1)
    return total / len(cases)


def gini(values):
    """Gini coefficient of non-negative values; 0 for an all-zero vector."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("gini needs at least one value")
    if np.any(x < 0):
        raise ValueError("gini is defined for non-negative values")
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    xs = np.sort(x)
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return float((2.0 * np.dot(ranks, xs) - (n + 1) * total) / (n * total))


def balance(hr_head, hr_mid, hr_tail):
    """(1 - Gini of the three cohort hit rates) x 100.

    Returns (value, degenerate); degenerate marks the all-zero case where
    Gini is 0 by convention and the 100 reading is vacuous.
    """
    triple = (hr_head, hr_mid, hr_tail)
    if any(v < 0 for v in triple):
        raise ValueError("cohort hit rates must be non-negative")
    if all(v == 0 for v in triple):
        return 100.0, True
    return 100.0 * (1.0 - gini(triple)), False


def cohort_metrics(cases, cohorts, k):
    """Stratify (RankedList, label) cases by the label's cohort.

    Unseen-cohort labels count toward Total only; Balance is computed from
    the head/mid/tail hit rates and absent when any of the three is.
    """
    groups = {c: [] for c in Cohort}
    for case in cases:
        groups[Cohort(cohorts.labels[case[1]])].append(case)

    record = MetricsRecord(k=k)
    record.hr_total = hit_rate(cases)
    record.ndcg_total = ndcg(cases)
    for cohort, suffix in ((Cohort.HEAD, "head"), (Cohort.MID, "mid"),
                           (Cohort.TAIL, "tail")):
        setattr(record, "hr_" + suffix, hit_rate(groups[cohort]))
        setattr(record, "ndcg_" + suffix, ndcg(groups[cohort]))
    record.case_counts = {
        "total": len(cases),
        "head": len(groups[Cohort.HEAD]),
        "mid": len(groups[Cohort.MID]),
        "tail": len(groups[Cohort.TAIL]),
        "unseen": len(groups[Cohort.UNSEEN]),
    }
    triple = (record.hr_head, record.hr_mid, record.hr_tail)
    if all(v is not None for v in triple):
        record.balance, record.balance_degenerate = balance(*triple)
    return record


def poprec(train, k, pop=None):
    """The non-personalized baseline list: k most frequent train items.

    Frequency descending, ties by item id ascending; the same list serves
    every evaluation case. When k exceeds the corpus the whole corpus is
    returned in frequency order.
    """
    if pop is None:
        pop = build_popularity(train)
    ids = np.arange(1, pop.freq.size, dtype=np.int64)
    order = ids[np.lexsort((ids, -pop.freq[ids]))]
    take = min(k, order.size)
    return RankedList(items=tuple(int(i) for i in order[:take]), k=k)


def aggregate_runs(records):
    """Field-wise sample mean and (n-1)-denominator std over run records.

    A field absent in any run stays absent in both outputs. A single run
    aggregates to std 0 with n_runs = 1 marking the degenerate case.
    """
    if not records:
        raise ValueError("no records to aggregate")
    ks = {r.k for r in records}
    if len(ks) != 1:
        raise ValueError("records disagree on k")
    n = len(records)
    mean = MetricsRecord(k=records[0].k, n_runs=n,
                         case_counts=dict(records[0].case_counts))
    std = MetricsRecord(k=records[0].k, n_runs=n,
                        case_counts=dict(records[0].case_counts))
    for name in _METRIC_FIELDS:
        values = [getattr(r, name) for r in records]
        if any(v is None for v in values):
            continue
        arr = np.asarray(values, dtype=np.float64)
        setattr(mean, name, float(arr.mean()))
        setattr(std, name, float(arr.std(ddof=1)) if n > 1 else 0.0)
    mean.balance_degenerate = any(r.balance_degenerate for r in records)
    std.balance_degenerate = mean.balance_degenerate
    return mean, std
