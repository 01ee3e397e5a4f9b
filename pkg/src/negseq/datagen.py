"""Synthetic interaction logs with a heavy-tailed popularity profile.

Items carry Zipf-like base popularity and belong to genres; each item
also gets a few plausible same-genre successors. Users hold a two-genre
preference and sessions are random walks that mostly follow successor
links, so sequences are predictable at two levels (genre from history,
short-range transitions from the last item) while the corpus keeps the
few-head/long-tail shape that popularity-stratified evaluation needs.
"""

import numpy as np

from .data import Interaction


def generate_interactions(num_users=800, num_items=1500, mean_len=80,
                          seed=0, zipf_exponent=1.1, follow_prob=0.65,
                          num_successors=8, num_genres=12,
                          genre_mix=(0.65, 0.30, 0.05), min_len=5,
                          time_range=1_000_000):
    """Build a synthetic log as a list of Interaction records.

    ``genre_mix`` is (primary, secondary, anywhere) probability of where a
    fresh (non-successor) draw comes from. Event timestamps are drawn
    uniformly over ``time_range`` per user and sorted, so users interleave
    on the global timeline and a temporal split leaves most of them with
    both history and future targets.
    """
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, num_items + 1, dtype=np.float64)
    weights = ranks ** (-zipf_exponent)
    weights /= weights.sum()
    genres = np.arange(num_items) % num_genres

    genre_items, genre_weights = [], []
    for g in range(num_genres):
        members = np.flatnonzero(genres == g)
        w = weights[members]
        genre_items.append(members)
        genre_weights.append(w / w.sum())

    successors = np.empty((num_items, num_successors), dtype=np.int64)
    for i in range(num_items):
        members = genre_items[genres[i]]
        w = genre_weights[genres[i]]
        succ = rng.choice(members, size=num_successors, replace=False,
                          p=w) if members.size > num_successors else \
            rng.permutation(members)[:num_successors]
        succ[succ == i] = members[(int(np.flatnonzero(
            members == i)[0]) + 1) % members.size]
        if succ.size < num_successors:
            succ = np.resize(succ, num_successors)
        successors[i] = succ

    p_primary, p_secondary, _ = genre_mix

    def fresh_item(preferred, visited):
        for _ in range(20):
            u = rng.random()
            if u < p_primary:
                g = preferred[0]
            elif u < p_primary + p_secondary:
                g = preferred[1]
            else:
                g = int(rng.choice(num_genres))
            item = int(rng.choice(genre_items[g], p=genre_weights[g]))
            if item not in visited:
                return item
        remaining = np.setdiff1d(np.arange(num_items),
                                 np.fromiter(visited, dtype=np.int64))
        return int(rng.choice(remaining))

    interactions = []
    for u in range(num_users):
        length = min(max(min_len, int(rng.poisson(mean_len))),
                     num_items - 1)
        stamps = np.sort(rng.integers(0, time_range, size=length))
        preferred = rng.choice(num_genres, size=2, replace=False)
        visited = set()
        current = fresh_item(preferred, visited)
        for t in range(length):
            visited.add(current)
            interactions.append(Interaction(
                user=f"u{u}", item=f"i{current}",
                timestamp=int(stamps[t])))
            # users consume each item at most once, so the next step must
            # avoid the visited set (matches the no-revisit shape of
            # movie-style logs and keeps history-excluded retrieval fair)
            nxt = None
            if rng.random() < follow_prob:
                options = [s for s in successors[current]
                           if s not in visited]
                if options:
                    nxt = int(options[rng.integers(0, len(options))])
            if nxt is None:
                nxt = fresh_item(preferred, visited)
            current = nxt
    return interactions


def write_tsv(interactions, path):
    with open(path, "w") as fh:
        for it in interactions:
            fh.write(f"{it.user}\t{it.item}\t{it.timestamp}\n")
