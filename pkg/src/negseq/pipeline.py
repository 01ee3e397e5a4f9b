"""Mini-batch generation, the bounded reuse buffer, and the training loop.

The reuse buffer realizes the oversampling factor (OSF) exactly: the first
``OSF x batches_per_epoch`` draws produce and store fresh batches, every
later draw returns a uniformly random stored batch. A threaded producer
variant overlaps generation with training and is bit-identical to the
serial path for the same seed.
"""

import queue
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from . import metrics as metrics_mod
from .samplers import (ADAPTIVE_METHODS, adaptive_filter,
                       build_candidate_pool)


@dataclass
class MiniBatch:
    users: np.ndarray     # [B] internal user indices
    seqs: np.ndarray      # [B, S] left-padded windows
    targets: np.ndarray   # [B, S] next-item ids, 0 where unsupervised
    pad_mask: np.ndarray  # [B, S] bool, True = supervised position
    negatives: object = None


@dataclass(frozen=True)
class BufferConfig:
    osf: int = 1
    batches_per_epoch: int = 1

    def __post_init__(self):
        if self.osf < 1 or self.batches_per_epoch < 1:
            raise ValueError("osf and batches_per_epoch must be >= 1")

    @property
    def capacity(self):
        return self.osf * self.batches_per_epoch


def window_user(items, seq_len):
    """Pick the training window and shifted targets for one user.

    Each position predicts the next interaction. When the sequence is
    longer than the window, the window ends one interaction early so the
    final position is supervised by the interaction just beyond it;
    otherwise the final position has no target and is masked.
    """
    items = np.asarray(items, dtype=np.int64)
    seq = np.zeros(seq_len, dtype=np.int64)
    tgt = np.zeros(seq_len, dtype=np.int64)
    if items.size > seq_len:
        seq[:] = items[-(seq_len + 1):-1]
        tgt[:] = items[-seq_len:]
    else:
        n = items.size
        seq[seq_len - n:] = items
        tgt[seq_len - n:-1] = items[1:]
    return seq, tgt


class BatchGenerator:
    """Yields shuffled per-epoch mini-batches with attached negatives.

    One generator owns one rng stream; concurrent producers must use
    distinct stream ids (seeded default_rng([base_seed, 1, stream_id])).
    """

    def __init__(self, train, batch_size, sampler_config, pop, rng,
                 seq_len):
        self.train = train
        self.batch_size = batch_size
        self.sampler_config = sampler_config
        self.pop = pop
        self.rng = rng
        self.seq_len = seq_len
        self.users = np.array(sorted(train.sequences), dtype=np.int64)
        self.batches_per_epoch = -(-self.users.size // batch_size)
        self._windows = {}
        self._histories = {}
        for u in self.users:
            items = train.sequences[int(u)].items
            self._windows[int(u)] = window_user(items, seq_len)
            self._histories[int(u)] = np.unique(items)
        self._order = None
        self._cursor = 0

    def next_batch(self):
        if self._order is None or self._cursor >= self.users.size:
            self._order = self.rng.permutation(self.users)
            self._cursor = 0
        chunk = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size

        B = chunk.size
        seqs = np.zeros((B, self.seq_len), dtype=np.int64)
        targets = np.zeros((B, self.seq_len), dtype=np.int64)
        for i, u in enumerate(chunk):
            seqs[i], targets[i] = self._windows[int(u)]
        pad_mask = (seqs != 0) & (targets != 0)
        history_sets = [self._histories[int(u)] for u in chunk]
        negatives = build_candidate_pool(self.sampler_config, seqs, targets,
                                         history_sets, self.pop, self.rng)
        return MiniBatch(users=chunk.copy(), seqs=seqs, targets=targets,
                         pad_mask=pad_mask, negatives=negatives)


class ReuseBuffer:
    """Fresh batches until capacity, then uniform random reuse.

    ``produce`` is called exactly ``capacity`` times over the buffer's
    lifetime. In threaded mode a single producer thread works ahead
    through a bounded queue (back-pressure); the sequence of returned
    batches is identical to serial mode for the same seeds because reuse
    draws come from the buffer's own rng.
    """

    def __init__(self, capacity, produce, rng, threaded=False,
                 queue_depth=4):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.store = []
        self.fresh_count = 0
        self.reuse_count = 0
        self.generation_time = 0.0
        self._produce = produce
        self._queue = None
        self._thread = None
        self._closed = False
        if threaded:
            self._queue = queue.Queue(maxsize=queue_depth)
            self._thread = threading.Thread(target=self._fill, daemon=True)
            self._thread.start()

    def _fill(self):
        for _ in range(self.capacity):
            if self._closed:
                return
            start = time.perf_counter()
            batch = self._produce()
            self.generation_time += time.perf_counter() - start
            while not self._closed:
                try:
                    self._queue.put(batch, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def next(self):
        if self.fresh_count < self.capacity:
            if self._queue is not None:
                batch = self._queue.get()
            else:
                start = time.perf_counter()
                batch = self._produce()
                self.generation_time += time.perf_counter() - start
            self.store.append(batch)
            self.fresh_count += 1
            return batch
        self.reuse_count += 1
        return self.store[int(self.rng.integers(0, len(self.store)))]

    def close(self):
        self._closed = True
        if self._thread is not None:
            self._thread.join()


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    best_val_ndcg: float
    log: list
    test_record: object


def _refresh_retention(model, batch, sampler_config):
    """Re-select hard negatives with the current model state.

    Selection is non-differentiable: it runs an eval-mode forward and only
    gates which loss terms count. Stored batches stay immutable; a copy
    with the new retention mask is returned.
    """
    fwd = model.forward(batch.seqs, train_mode=False)
    scores = model.score_candidates(fwd.causal, batch.negatives.pool)
    retention = adaptive_filter(scores, sampler_config.k_retain,
                                batch.negatives.exclusion)
    return replace(batch, negatives=replace(batch.negatives,
                                            retention=retention))


def evaluate_cases(model, cases, k, exclude_history=True, batch_size=256):
    """Retrieve top-k for each EvalCase; returns [(RankedList, label)]."""
    S = model.config.max_seq_len
    out = []
    for start in range(0, len(cases), batch_size):
        chunk = cases[start:start + batch_size]
        seqs = np.zeros((len(chunk), S), dtype=np.int64)
        for i, case in enumerate(chunk):
            window = case.history[-S:]
            seqs[i, S - window.size:] = window
        causal = model.forward(seqs, train_mode=False).causal
        for i, case in enumerate(chunk):
            ranked = model.rank_corpus(causal[i, -1], case.history, k,
                                       exclude_history)
            out.append((metrics_mod.RankedList(items=tuple(ranked), k=k),
                        case.target))
    return out


def train_run(split, model, sampler_config, osf=1, *, epochs,
              eval_every, lr, batch_size, seed, eval_k=10,
              exclude_history=True, threaded=False, cohorts=None, pop=None):
    """Train for ``epochs`` and keep the checkpoint with best val NDCG@k.

    Validation runs every ``eval_every`` epochs and on the final epoch;
    ties keep the earlier epoch. The best checkpoint is then evaluated on
    the test cases. Any non-finite parameter or gradient aborts with
    TrainingFault carrying the epoch index.
    """
    if pop is None:
        from .data import build_popularity
        pop = build_popularity(split.train)
    gen_rng = np.random.default_rng([seed, 1, 0])
    buf_rng = np.random.default_rng([seed, 2])
    drop_rng = np.random.default_rng([seed, 3])

    generator = BatchGenerator(split.train, batch_size, sampler_config,
                               pop, gen_rng, model.config.max_seq_len)
    bpe = generator.batches_per_epoch
    buffer_config = BufferConfig(osf=osf, batches_per_epoch=bpe)
    buffer = ReuseBuffer(buffer_config.capacity, generator.next_batch,
                         buf_rng, threaded=threaded)
    adaptive = sampler_config.method in ADAPTIVE_METHODS

    log = []
    best = (-np.inf, None, None)   # (val ndcg, epoch, snapshot)
    fresh_seen = 0
    reused_seen = 0
    try:
        for epoch in range(1, epochs + 1):
            start = time.perf_counter()
            losses = []
            for _ in range(bpe):
                batch = buffer.next()
                if adaptive:
                    batch = _refresh_retention(model, batch, sampler_config)
                fwd = model.forward(batch.seqs, train_mode=True,
                                    rng=drop_rng)
                neg_mask = batch.negatives.active_mask(
                    model.config.max_seq_len)
                loss, grads, _ = model.loss_and_grads(
                    fwd, batch.targets, batch.negatives.pool, neg_mask,
                    batch.pad_mask)
                model.apply_gradients(grads, lr)
                losses.append(loss)
            entry = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_ndcg10": None,
                "val_hr10": None,
                "wall_clock_s": None,
                "fresh_batches": buffer.fresh_count - fresh_seen,
                "reused_batches": buffer.reuse_count - reused_seen,
            }
            fresh_seen = buffer.fresh_count
            reused_seen = buffer.reuse_count
            if epoch % eval_every == 0 or epoch == epochs:
                cases = evaluate_cases(model, split.val_cases, eval_k,
                                       exclude_history)
                entry["val_ndcg10"] = metrics_mod.ndcg(cases)
                entry["val_hr10"] = metrics_mod.hit_rate(cases)
                if entry["val_ndcg10"] > best[0]:
                    best = (entry["val_ndcg10"], epoch, model.snapshot())
            entry["wall_clock_s"] = time.perf_counter() - start
            log.append(entry)
    except Exception as exc:
        buffer.close()
        if hasattr(exc, "epoch"):
            exc.epoch = len(log) + 1
        raise
    buffer.close()

    best_ndcg, best_epoch, snapshot = best
    model.restore(snapshot)
    test_record = None
    if cohorts is not None:
        cases = evaluate_cases(model, split.test_cases, eval_k,
                               exclude_history)
        test_record = metrics_mod.cohort_metrics(cases, cohorts, eval_k)
    return TrainResult(best_params=snapshot, best_epoch=best_epoch,
                       best_val_ndcg=best_ndcg, log=log,
                       test_record=test_record)
