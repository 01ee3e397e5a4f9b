"""Alias-method weighted sampling with per-user exclusion sets.

An :class:`AliasTable` gives O(1) draws from a fixed discrete distribution
(Vose's construction). :class:`WeightedDraw` wraps a table built over the
items with positive weight and draws i.i.d. items while rejecting any item
present in a caller-supplied exclusion set, falling back to a renormalized
restricted draw after ``max_rounds`` rejection rounds per slot.
"""

import numpy as np

from . import _kernels

MAX_REJECTION_ROUNDS = 100


class AliasTable:
    """Vose alias table over non-negative weights (at least one positive)."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d array")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("total weight must be positive")

        k = w.size
        scaled = w * (k / total)
        prob = np.ones(k, dtype=np.float64)
        alias = np.arange(k, dtype=np.int64)
        small = [i for i in range(k) if scaled[i] < 1.0]
        large = [i for i in range(k) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are numerically 1.0 cells
        self.prob = prob
        self.alias = alias
        self.size = k

    def draw(self, n, rng):
        """n i.i.d. indices in [0, size)."""
        ks = rng.integers(0, self.size, size=n)
        us = rng.random(n)
        return np.where(us < self.prob[ks], ks, self.alias[ks])


class WeightedDraw:
    """I.i.d. item draws from per-item weights, with exclusion support.

    ``item_weights`` is indexed by item id (index 0 is the padding id and
    must carry zero weight). Exclusion sets are passed CSR-style: a flat
    int64 array of item ids plus an indptr of length B+1.
    """

    def __init__(self, item_weights):
        w = np.asarray(item_weights, dtype=np.float64)
        support = np.flatnonzero(w > 0).astype(np.int64)
        if support.size == 0:
            raise ValueError("no item has positive weight")
        self.num_ids = w.size
        self.support_ids = support
        self.probs = w[support] / w[support].sum()
        self.table = AliasTable(w[support])
        self._support_pos = np.full(w.size, -1, dtype=np.int64)
        self._support_pos[support] = np.arange(support.size, dtype=np.int64)

    @property
    def support_size(self):
        return self.support_ids.size

    def eligible_counts(self, excl_items, excl_indptr):
        """Number of positive-weight items outside each exclusion set."""
        B = excl_indptr.size - 1
        counts = np.empty(B, dtype=np.int64)
        for b in range(B):
            excl = excl_items[excl_indptr[b]:excl_indptr[b + 1]]
            counts[b] = self.support_ids.size - int(
                np.count_nonzero(self._support_pos[excl] >= 0))
        return counts

    def eligible_ids(self, excl):
        """All positive-weight item ids outside ``excl``, id ascending."""
        pos = self._support_pos[np.asarray(excl, dtype=np.int64)]
        keep = np.ones(self.support_ids.size, dtype=bool)
        keep[pos[pos >= 0]] = False
        return self.support_ids[keep]

    def draw(self, n, excl_items, excl_indptr, rng,
             max_rounds=MAX_REJECTION_ROUNDS):
        """Draw [B, n] items i.i.d. from the weights, exclusions rejected.

        Every user must have at least one eligible item; rows that survive
        ``max_rounds`` rejection rounds with open slots are completed by a
        renormalized draw restricted to that user's eligible items.
        """
        B = excl_indptr.size - 1
        out = np.zeros((B, n), dtype=np.int64)
        filled = np.zeros(B, dtype=np.int64)
        scratch = np.zeros(self.num_ids, dtype=np.uint8)
        for _ in range(max_rounds):
            need = n - filled
            total = int(need.sum())
            if total == 0:
                break
            ks = rng.integers(0, self.table.size, size=total)
            us = rng.random(total)
            _kernels.accept_draws(out, filled, ks, us, self.table.prob,
                                  self.table.alias, self.support_ids, need,
                                  excl_items, excl_indptr, scratch)
        for b in np.flatnonzero(filled < n):
            excl = excl_items[excl_indptr[b]:excl_indptr[b + 1]]
            w = self.probs.copy()
            pos = self._support_pos[excl]
            w[pos[pos >= 0]] = 0.0
            total = w.sum()
            if total <= 0:
                raise ValueError("exclusion set covers all weighted items")
            cdf = np.cumsum(w)
            m = n - int(filled[b])
            idx = np.searchsorted(cdf, rng.random(m) * total, side="right")
            idx = np.minimum(idx, np.flatnonzero(w > 0)[-1])
            out[b, filled[b]:] = self.support_ids[idx]
            filled[b] = n
        return out
