"""Negative candidate generation for the six sampling methods.

Methods and their logical candidate-tensor shapes:

    random / popularity / adaptive   -> [B, S, N]
    batch                            -> [B, S, B]
    mixed / adaptive_mixed           -> [B, S, B + N]

Candidate pools vary per user but not per position, so pools and exclusion
masks are stored [B, P] and broadcast over S; adaptive retention masks are
genuinely per-position ([B, S, P]). Exclusion is implemented by masking
candidates out of the loss for batch-derived pools and by rejection
resampling for global draws.
"""

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .alias import WeightedDraw


class ConfigurationError(ValueError):
    pass


class Method(str, enum.Enum):
    RANDOM = "random"
    POPULARITY = "popularity"
    BATCH = "batch"
    MIXED = "mixed"
    ADAPTIVE = "adaptive"
    ADAPTIVE_MIXED = "adaptive_mixed"


ADAPTIVE_METHODS = (Method.ADAPTIVE, Method.ADAPTIVE_MIXED)
MIXED_METHODS = (Method.MIXED, Method.ADAPTIVE_MIXED)


@dataclass(frozen=True)
class SamplerConfig:
    method: Method = Method.RANDOM
    n_negatives: int = 128
    k_retain: int = 32
    gamma: float = None            # None = per-method (random 0, popularity 1)
    batch_to_random_ratio: float = None  # randoms per in-batch candidate

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.n_negatives < 1:
            raise ConfigurationError("n_negatives must be >= 1")
        if self.method in ADAPTIVE_METHODS and self.k_retain < 1:
            raise ConfigurationError("k_retain must be >= 1 for adaptive "
                                     "methods")

    def random_pool_size(self, batch_size):
        if (self.method in MIXED_METHODS
                and self.batch_to_random_ratio is not None):
            return max(1, round(batch_size * self.batch_to_random_ratio))
        return self.n_negatives


@dataclass
class NegativeBatch:
    """Per-user candidate pools with exclusion and retention masks.

    pool[b] lists user b's candidate ids (0 pads short pools). exclusion
    is position-invariant and broadcasts over S; retention (adaptive only)
    is per-position. ``logical_shape`` is the method's (B, S, P) contract.
    """
    pool: np.ndarray              # [B, P] int64
    exclusion: np.ndarray         # [B, P] bool, True = never a negative
    retention: np.ndarray = None  # [B, S, P] bool or None
    logical_shape: tuple = None
    shortfall: np.ndarray = None  # [B] bool

    def active_mask(self, seq_len=None):
        """[B, S, P] mask of negative terms that count in the loss."""
        if seq_len is None:
            seq_len = self.logical_shape[1]
        base = np.broadcast_to(~self.exclusion[:, None, :],
                               (self.pool.shape[0], seq_len,
                                self.pool.shape[1]))
        if self.retention is None:
            return base.copy()
        return base & self.retention


def _exclusion_csr(history_sets):
    items = (np.concatenate(history_sets) if history_sets
             else np.zeros(0, np.int64))
    indptr = np.zeros(len(history_sets) + 1, dtype=np.int64)
    np.cumsum([len(h) for h in history_sets], out=indptr[1:])
    return items.astype(np.int64), indptr


def sample_global(pop, gamma, n, exclude, rng):
    """n i.i.d. item draws with weights proportional to freq**gamma.

    Items in ``exclude`` are rejected (resampled, capped at 100 rounds,
    then completed by a renormalized restricted draw). Draws are with
    replacement, so n may exceed the eligible count; the shortfall flag
    reports when fewer than n distinct items were eligible. With nothing
    eligible the result is empty and flagged.
    """
    wd = WeightedDraw(pop.weights(gamma))
    excl = (np.unique(np.asarray(list(exclude), dtype=np.int64))
            if len(exclude) else np.zeros(0, np.int64))
    indptr = np.array([0, excl.size], dtype=np.int64)
    eligible = int(wd.eligible_counts(excl, indptr)[0])
    if eligible == 0:
        return np.zeros(0, dtype=np.int64), True
    return wd.draw(n, excl, indptr, rng)[0], eligible < n


def _draw_global_pool(weighted, n, excl_items, excl_indptr, rng):
    """[B, n] i.i.d. pools; a user with nothing eligible gets an all-pad
    (fully excluded) row, and shortfall marks users with < n distinct
    eligible items."""
    B = excl_indptr.size - 1
    eligible = weighted.eligible_counts(excl_items, excl_indptr)
    drawable = eligible > 0
    pool = np.zeros((B, n), dtype=np.int64)
    if drawable.any():
        sub_items, sub_indptr, rows = _csr_subset(
            excl_items, excl_indptr, drawable)
        pool[rows] = weighted.draw(n, sub_items, sub_indptr, rng)
    exclusion = pool == 0
    return pool, exclusion, eligible < n


def _csr_subset(items, indptr, keep):
    rows = np.flatnonzero(keep)
    parts = [items[indptr[b]:indptr[b + 1]] for b in rows]
    sub_items, sub_indptr = _exclusion_csr(parts)
    return sub_items, sub_indptr, rows


def sample_batch(batch_positives, user_histories, seq_len):
    """In-batch negatives: every user's positive item is a candidate.

    Each user sees the same B-slot pool (the batch's positives in batch
    order); candidates present in a user's own sequence are excluded by
    mask. A single-user batch therefore has an empty eligible pool.
    """
    positives = np.asarray(batch_positives, dtype=np.int64)
    B = positives.size
    pool = np.tile(positives, (B, 1))
    excl_items, excl_indptr = _exclusion_csr(list(user_histories))
    num_ids = int(max(pool.max(), excl_items.max() if excl_items.size
                      else 0)) + 1
    scratch = np.zeros(num_ids, dtype=np.uint8)
    mask = _kernels.member_mask(np.ascontiguousarray(pool), excl_items,
                                excl_indptr, scratch)
    exclusion = mask.astype(bool) | (pool == 0)
    return NegativeBatch(pool=pool, exclusion=exclusion,
                         logical_shape=(B, seq_len, B),
                         shortfall=np.zeros(B, dtype=bool))


def sample_mixed(batch_part, random_part):
    """Concatenate in-batch and random pools into a [B, S, B+N] batch."""
    if batch_part.pool.shape[0] != random_part.pool.shape[0]:
        raise ValueError("parts built for different batches")
    B, S, Pb = batch_part.logical_shape
    Pr = random_part.logical_shape[2]
    return NegativeBatch(
        pool=np.hstack([batch_part.pool, random_part.pool]),
        exclusion=np.hstack([batch_part.exclusion, random_part.exclusion]),
        logical_shape=(B, S, Pb + Pr),
        shortfall=batch_part.shortfall | random_part.shortfall)


def adaptive_filter(scores, k, masks):
    """Retain the top-k highest-scoring eligible candidates per position.

    scores: [B, S, P]; masks: exclusion, [B, P] or [B, S, P], True =
    ineligible. Ties break toward the lower candidate index; positions
    with fewer than k eligible candidates retain all of them.

    Selection is threshold-based (partition, not a full sort): keep
    everything above the k-th largest value, then admit entries equal to
    it in index order until the quota is met. Excluded entries sit at
    -inf so they can never reach a finite threshold.
    """
    if k <= 0:
        raise ConfigurationError("retention count must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 2:
        masks = np.broadcast_to(masks[:, None, :], scores.shape)
    blocked = np.where(masks, -np.inf, scores)
    P = blocked.shape[-1]
    eligible = (~masks).sum(axis=-1, keepdims=True)
    quota = np.minimum(k, eligible)
    if k >= P:
        return ~masks
    threshold = np.partition(blocked, P - k, axis=-1)[..., P - k:P - k + 1]
    above = blocked > threshold
    at = (blocked == threshold) & ~masks
    room = quota - above.sum(axis=-1, keepdims=True)
    retention = above | (at & (np.cumsum(at, axis=-1) <= room))
    return retention


def build_negatives(config, seqs, targets, history_sets, pop, rng,
                    model_scorer=None):
    """Method-dispatched negative batch for one mini-batch of users.

    ``history_sets`` are per-user arrays of item ids that may never act as
    that user's negatives (their full train sequence). Adaptive methods
    need ``model_scorer(seqs, pool) -> [B, S, P]`` and raise without one;
    use :func:`build_candidate_pool` when retention is applied later.
    """
    if config.method in ADAPTIVE_METHODS and model_scorer is None:
        raise ConfigurationError(
            f"{config.method.value} sampling needs a model scorer")
    neg = build_candidate_pool(config, seqs, targets, history_sets, pop, rng)
    if config.method in ADAPTIVE_METHODS:
        scores = model_scorer(seqs, neg.pool)
        retention = adaptive_filter(scores, config.k_retain, neg.exclusion)
        neg = replace(neg, retention=retention)
    return neg


def build_candidate_pool(config, seqs, targets, history_sets, pop, rng):
    """The pool-and-exclusion part of build_negatives (no retention)."""
    B, S = np.asarray(seqs).shape
    method = config.method
    if method in (Method.RANDOM, Method.ADAPTIVE, Method.POPULARITY):
        gamma = config.gamma
        if gamma is None:
            gamma = 1.0 if method == Method.POPULARITY else 0.0
        weighted = WeightedDraw(pop.weights(gamma))
        excl_items, excl_indptr = _exclusion_csr(list(history_sets))
        pool, exclusion, shortfall = _draw_global_pool(
            weighted, config.n_negatives, excl_items, excl_indptr, rng)
        return NegativeBatch(pool=pool, exclusion=exclusion,
                             logical_shape=(B, S, config.n_negatives),
                             shortfall=shortfall)
    if method in (Method.BATCH, Method.MIXED, Method.ADAPTIVE_MIXED):
        positives = _batch_positives(targets)
        batch_part = sample_batch(positives, history_sets, S)
        if method == Method.BATCH:
            return batch_part
        n_rand = config.random_pool_size(B)
        weighted = WeightedDraw(pop.weights(0.0))
        excl_items, excl_indptr = _exclusion_csr(list(history_sets))
        pool, exclusion, shortfall = _draw_global_pool(
            weighted, n_rand, excl_items, excl_indptr, rng)
        random_part = NegativeBatch(pool=pool, exclusion=exclusion,
                                    logical_shape=(B, S, n_rand),
                                    shortfall=shortfall)
        return sample_mixed(batch_part, random_part)
    raise ConfigurationError(f"unknown method {method!r}")


def _batch_positives(targets):
    """One representative positive per user: the latest supervised target."""
    targets = np.asarray(targets, dtype=np.int64)
    out = np.zeros(targets.shape[0], dtype=np.int64)
    for b in range(targets.shape[0]):
        nz = np.flatnonzero(targets[b])
        if nz.size:
            out[b] = targets[b, nz[-1]]
    return out


def trace_rows(neg, users):
    """Audit rows (user, position, candidate, excluded, retained)."""
    B, S, P = neg.logical_shape
    active = neg.active_mask(S)
    for b in range(B):
        for t in range(S):
            for p in range(P):
                yield (int(users[b]), t, int(neg.pool[b, p]),
                       bool(neg.exclusion[b, p]), bool(active[b, t, p]))
