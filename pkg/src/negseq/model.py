"""Causal self-attention next-item model with hand-derived gradients.

The network follows the standard self-attentive sequential recommender
layout: shared item embeddings (row 0 = padding, frozen at zero), learned
positional embeddings, L blocks of causal multi-head self-attention and a
position-wise ReLU feed-forward net, each followed by residual addition
and layer normalization. Everything runs in float64 numpy; the backward
pass is written out layer by layer and held to a central finite-difference
contract by the test suite.

Array convention: ``causal[b, t]`` is the user state after consuming
``seqs[b, :t + 1]``, i.e. the embedding that scores candidates for the
interaction following position t. Perturbing the input at position t
therefore never changes output rows before t.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

LN_EPS = 1e-8
MASKED_LOGIT = -1e30
CHECKPOINT_MAGIC = b"NEGSEQCKPT1\n"


class TrainingFault(RuntimeError):
    """Non-finite parameter or gradient encountered during training."""

    def __init__(self, message, param=None, epoch=None):
        super().__init__(message)
        self.param = param
        self.epoch = epoch


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 1
    max_seq_len: int = 50
    dropout: float = 0.2
    ffn_hidden: int = None   # defaults to embed_dim
    corpus_size: int = 0     # number of real items (ids 1..corpus_size)

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.max_seq_len < 1 or self.num_blocks < 1:
            raise ValueError("max_seq_len and num_blocks must be >= 1")
        if self.corpus_size < 1:
            raise ValueError("corpus_size must be >= 1")
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", self.embed_dim)


@dataclass
class ForwardOutput:
    causal: np.ndarray   # [B, S, d]; zero rows at padding positions
    cache: dict          # activations for backward


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def score(user_emb, item_emb):
    """Dot-product relevance score."""
    return float(np.dot(np.asarray(user_emb), np.asarray(item_emb)))


def predict_proba(s):
    """Interaction probability sigma(s)."""
    return float(sigmoid(np.float64(s)))


def bce_loss(pos_scores, neg_scores, neg_mask, pad_mask):
    """Sampled binary cross-entropy, averaged over supervised positions.

    pos_scores: [B, S]; neg_scores: [B, S, P]; neg_mask: [B, S, P] bool
    (True = the negative term counts); pad_mask: [B, S] bool (True = the
    position is supervised). Masked entries contribute exactly zero.
    Returns (loss, counts).
    """
    pad_mask = np.asarray(pad_mask, dtype=bool)
    n_pos = int(pad_mask.sum())
    if n_pos == 0:
        raise ValueError("empty batch: no supervised positions")
    active = np.asarray(neg_mask, dtype=bool) & pad_mask[:, :, None]
    pos_term = float(softplus(-np.asarray(pos_scores))[pad_mask].sum())
    neg_term = float((softplus(np.asarray(neg_scores)) * active).sum())
    loss = (pos_term + neg_term) / n_pos
    return loss, {"positions": n_pos, "neg_terms": int(active.sum())}


def _xavier(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return gain * xhat + bias, (xhat, inv)


def _layer_norm_backward(dy, gain, ctx):
    xhat, inv = ctx
    d = xhat.shape[-1]
    dxhat = dy * gain
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    return dx, dgain, dbias


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class SeqModel:
    """Parameter container plus forward / backward / optimizer step."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng([seed, 0xE17B])
        d, f = config.embed_dim, config.ffn_hidden
        params = {}
        params["item_emb"] = rng.normal(
            0.0, 0.02, size=(config.corpus_size + 1, d))
        params["item_emb"][0] = 0.0
        params["pos_emb"] = rng.normal(
            0.0, 0.02, size=(config.max_seq_len, d))
        for i in range(config.num_blocks):
            p = f"blk{i}."
            for name in ("wq", "wk", "wv", "wo"):
                params[p + name] = _xavier(rng, d, d)
                params[p + name.replace("w", "b")] = np.zeros(d)
            params[p + "ln1.g"] = np.ones(d)
            params[p + "ln1.b"] = np.zeros(d)
            params[p + "w1"] = _xavier(rng, d, f)
            params[p + "b1"] = np.zeros(f)
            params[p + "w2"] = _xavier(rng, f, d)
            params[p + "b2"] = np.zeros(d)
            params[p + "ln2.g"] = np.ones(d)
            params[p + "ln2.b"] = np.zeros(d)
        self.params = params
        self._adam_m = {k: np.zeros_like(v) for k, v in params.items()}
        self._adam_v = {k: np.zeros_like(v) for k, v in params.items()}
        self._adam_t = 0

    # ----- forward -------------------------------------------------------

    def forward(self, seqs, train_mode=False, rng=None):
        """Encode [B, S] padded id rows into causal embeddings [B, S, d].

        Ids must lie in [0, corpus_size]; 0 is left padding only. Dropout
        fires only in train_mode (rng required when the rate is positive).
        """
        seqs = np.asarray(seqs, dtype=np.int64)
        cfg = self.config
        if seqs.ndim != 2 or seqs.shape[1] != cfg.max_seq_len:
            raise ValueError(f"expected [B, {cfg.max_seq_len}] input")
        if seqs.min() < 0 or seqs.max() > cfg.corpus_size:
            raise ValueError("item id out of range")
        use_dropout = train_mode and cfg.dropout > 0.0
        if use_dropout and rng is None:
            raise ValueError("train_mode forward needs an rng for dropout")

        B, S = seqs.shape
        d = cfg.embed_dim
        h = cfg.num_heads
        dh = d // h
        real = seqs != 0
        # position index counts real tokens from the left so that extra
        # left-padding cannot shift any real token's positional embedding
        pos_idx = np.where(real, np.cumsum(real, axis=1) - 1, 0)

        cache = {"seqs": seqs, "real": real, "pos_idx": pos_idx,
                 "use_dropout": use_dropout, "blocks": []}
        keep = real[:, :, None].astype(np.float64)
        x = (self.params["item_emb"][seqs] * np.sqrt(d)
             + self.params["pos_emb"][pos_idx]) * keep
        if use_dropout:
            mask = (rng.random(x.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
            cache["emb_drop"] = mask
            x = x * mask

        # attention mask: attend to earlier-or-same real positions; fully
        # padded rows attend to themselves so softmax stays defined
        tril = np.tril(np.ones((S, S), dtype=bool))
        allowed = tril[None, :, :] & real[:, None, :]
        allowed |= np.eye(S, dtype=bool)[None, :, :] & ~real[:, :, None]
        cache["allowed"] = allowed

        for i in range(cfg.num_blocks):
            p = f"blk{i}."
            blk = {"x_in": x}
            q = x @ self.params[p + "wq"] + self.params[p + "bq"]
            k = x @ self.params[p + "wk"] + self.params[p + "bk"]
            v = x @ self.params[p + "wv"] + self.params[p + "bv"]
            qh = q.reshape(B, S, h, dh).transpose(0, 2, 1, 3)
            kh = k.reshape(B, S, h, dh).transpose(0, 2, 1, 3)
            vh = v.reshape(B, S, h, dh).transpose(0, 2, 1, 3)
            logits = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)
            logits = np.where(allowed[:, None, :, :], logits, MASKED_LOGIT)
            attn = _softmax(logits)
            if use_dropout:
                amask = ((rng.random(attn.shape) >= cfg.dropout)
                         / (1.0 - cfg.dropout))
                blk["attn_drop"] = amask
                attn_used = attn * amask
            else:
                attn_used = attn
            ctx = (attn_used @ vh).transpose(0, 2, 1, 3).reshape(B, S, d)
            a_out = ctx @ self.params[p + "wo"] + self.params[p + "bo"]
            if use_dropout:
                omask = ((rng.random(a_out.shape) >= cfg.dropout)
                         / (1.0 - cfg.dropout))
                blk["out_drop"] = omask
                a_out = a_out * omask
            blk.update(qh=qh, kh=kh, vh=vh, attn=attn, ctx=ctx)

            x1_in = x + a_out
            x1, blk["ln1"] = _layer_norm_forward(
                x1_in, self.params[p + "ln1.g"], self.params[p + "ln1.b"])
            blk["x1"] = x1

            hid = x1 @ self.params[p + "w1"] + self.params[p + "b1"]
            relu = np.maximum(hid, 0.0)
            blk["relu_gate"] = hid > 0
            if use_dropout:
                fmask = ((rng.random(relu.shape) >= cfg.dropout)
                         / (1.0 - cfg.dropout))
                blk["ffn_drop"] = fmask
                relu = relu * fmask
            blk["relu"] = relu
            f_out = relu @ self.params[p + "w2"] + self.params[p + "b2"]

            x2_in = x1 + f_out
            x2, blk["ln2"] = _layer_norm_forward(
                x2_in, self.params[p + "ln2.g"], self.params[p + "ln2.b"])
            x = x2 * keep
            cache["blocks"].append(blk)

        return ForwardOutput(causal=x, cache=cache)

    # ----- loss and gradients --------------------------------------------

    def score_candidates(self, causal, pool):
        """Scores [B, S, P] of per-user candidate ids against all positions."""
        neg_embs = self.params["item_emb"][pool]
        return causal @ neg_embs.transpose(0, 2, 1)

    def loss_and_grads(self, fwd, targets, pool, neg_mask, pad_mask):
        """Sampled-BCE loss plus gradients for every parameter.

        targets: [B, S] positive ids (0 where unsupervised); pool: [B, P]
        candidate ids; neg_mask: [B, S, P] bool of counted negative terms;
        pad_mask: [B, S] bool of supervised positions.
        """
        causal = fwd.causal
        emb = self.params["item_emb"]
        pad_mask = np.asarray(pad_mask, dtype=bool)
        pos_emb_vec = emb[targets]
        pos_scores = np.einsum("bsd,bsd->bs", causal, pos_emb_vec)
        neg_embs = emb[pool]
        neg_scores = causal @ neg_embs.transpose(0, 2, 1)
        loss, counts = bce_loss(pos_scores, neg_scores, neg_mask, pad_mask)

        n_pos = counts["positions"]
        active = np.asarray(neg_mask, dtype=bool) & pad_mask[:, :, None]
        d_pos = np.where(pad_mask, sigmoid(pos_scores) - 1.0, 0.0) / n_pos
        d_neg = sigmoid(neg_scores)
        d_neg *= active
        d_neg /= n_pos

        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        d_causal = d_pos[:, :, None] * pos_emb_vec + d_neg @ neg_embs
        np.add.at(grads["item_emb"], targets, d_pos[:, :, None] * causal)
        np.add.at(grads["item_emb"], pool,
                  d_neg.transpose(0, 2, 1) @ causal)
        self._backward(fwd.cache, d_causal, grads)
        grads["item_emb"][0] = 0.0
        return loss, grads, counts

    def _backward(self, cache, d_out, grads):
        cfg = self.config
        seqs = cache["seqs"]
        keep = cache["real"][:, :, None].astype(np.float64)
        B, S = seqs.shape
        d = cfg.embed_dim
        h = cfg.num_heads
        dh = d // h
        dx = d_out
        for i in reversed(range(cfg.num_blocks)):
            p = f"blk{i}."
            blk = cache["blocks"][i]
            dx = dx * keep
            dx2_in, dg, db = _layer_norm_backward(
                dx, self.params[p + "ln2.g"], blk["ln2"])
            grads[p + "ln2.g"] += dg
            grads[p + "ln2.b"] += db

            d_relu = dx2_in @ self.params[p + "w2"].T
            grads[p + "w2"] += np.einsum("bsf,bsd->fd", blk["relu"], dx2_in)
            grads[p + "b2"] += dx2_in.sum(axis=(0, 1))
            if "ffn_drop" in blk:
                d_relu = d_relu * blk["ffn_drop"]
            d_hid = d_relu * blk["relu_gate"]
            dx1 = dx2_in + d_hid @ self.params[p + "w1"].T
            grads[p + "w1"] += np.einsum("bsd,bsf->df", blk["x1"], d_hid)
            grads[p + "b1"] += d_hid.sum(axis=(0, 1))

            dx1_in, dg, db = _layer_norm_backward(
                dx1, self.params[p + "ln1.g"], blk["ln1"])
            grads[p + "ln1.g"] += dg
            grads[p + "ln1.b"] += db

            d_a_out = dx1_in
            if "out_drop" in blk:
                d_a_out = d_a_out * blk["out_drop"]
            d_ctx = d_a_out @ self.params[p + "wo"].T
            grads[p + "wo"] += np.einsum("bsd,bse->de", blk["ctx"], d_a_out)
            grads[p + "bo"] += d_a_out.sum(axis=(0, 1))

            d_ctx_h = d_ctx.reshape(B, S, h, dh).transpose(0, 2, 1, 3)
            attn = blk["attn"]
            if "attn_drop" in blk:
                attn_used = attn * blk["attn_drop"]
            else:
                attn_used = attn
            d_attn_used = d_ctx_h @ blk["vh"].transpose(0, 1, 3, 2)
            d_vh = attn_used.transpose(0, 1, 3, 2) @ d_ctx_h
            d_attn = (d_attn_used * blk["attn_drop"]
                      if "attn_drop" in blk else d_attn_used)
            d_logits = attn * (d_attn
                               - (d_attn * attn).sum(axis=-1, keepdims=True))
            d_logits = d_logits / np.sqrt(dh)
            d_qh = d_logits @ blk["kh"]
            d_kh = d_logits.transpose(0, 1, 3, 2) @ blk["qh"]

            x_in = blk["x_in"]
            dq = d_qh.transpose(0, 2, 1, 3).reshape(B, S, d)
            dk = d_kh.transpose(0, 2, 1, 3).reshape(B, S, d)
            dv = d_vh.transpose(0, 2, 1, 3).reshape(B, S, d)
            dx_attn = (dq @ self.params[p + "wq"].T
                       + dk @ self.params[p + "wk"].T
                       + dv @ self.params[p + "wv"].T)
            for name, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
                grads[p + name] += np.einsum("bsd,bse->de", x_in, dmat)
                grads[p + name.replace("w", "b")] += dmat.sum(axis=(0, 1))
            dx = dx1_in + dx_attn

        if cache["use_dropout"]:
            dx = dx * cache["emb_drop"]
        dx = dx * keep
        np.add.at(grads["item_emb"], seqs, dx * np.sqrt(d))
        np.add.at(grads["pos_emb"], cache["pos_idx"], dx)

    # ----- optimizer -------------------------------------------------------

    def apply_gradients(self, grads, lr, beta1=0.9, beta2=0.98, eps=1e-9):
        """One adaptive-moment update; padding row re-zeroed afterwards."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingFault(f"non-finite gradient in {name}",
                                    param=name)
        self._adam_t += 1
        t = self._adam_t
        for name, g in grads.items():
            m = self._adam_m[name]
            v = self._adam_v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            mhat = m / (1.0 - beta1 ** t)
            vhat = v / (1.0 - beta2 ** t)
            self.params[name] -= lr * mhat / (np.sqrt(vhat) + eps)
        self.params["item_emb"][0] = 0.0
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise TrainingFault(f"non-finite parameter {name}",
                                    param=name)

    # ----- retrieval -------------------------------------------------------

    def encode_history(self, history):
        """Causal embedding after the most recent max_seq_len interactions."""
        hist = np.asarray(history, dtype=np.int64)
        if hist.size == 0:
            raise ValueError("empty history")
        S = self.config.max_seq_len
        window = hist[-S:]
        row = np.zeros((1, S), dtype=np.int64)
        row[0, S - window.size:] = window
        out = self.forward(row, train_mode=False)
        return out.causal[0, -1]

    def retrieve_topk(self, history, k, exclude_history=True):
        """Rank the full corpus for the next item after ``history``.

        Score descending, ties by item id ascending. With exclusion on,
        history items are dropped from the candidate set; if fewer than k
        candidates remain, all of them are returned.
        """
        user_emb = self.encode_history(history)
        return self.rank_corpus(user_emb, np.asarray(history, np.int64),
                                k, exclude_history)

    def rank_corpus(self, user_emb, history, k, exclude_history):
        scores = self.params["item_emb"][1:] @ user_emb
        if exclude_history:
            hist = np.unique(history)
            hist = hist[(hist > 0) & (hist <= self.config.corpus_size)]
            scores = scores.copy()
            scores[hist - 1] = -np.inf
        ids = np.arange(1, self.config.corpus_size + 1)
        order = np.lexsort((ids, -scores))
        available = int(np.isfinite(scores).sum())
        take = min(k, available)
        return [int(ids[j]) for j in order[:take]]

    # ----- checkpointing ---------------------------------------------------

    def save(self, path):
        """Self-describing checkpoint: JSON header + row-major float64 data.

        Byte-deterministic for identical state, so manifests can compare
        checkpoints by hash.
        """
        names = sorted(self.params)
        header = {
            "config": asdict(self.config),
            "seed": self.seed,
            "params": [{"name": n, "shape": list(self.params[n].shape)}
                       for n in names],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for n in names:
                fh.write(np.ascontiguousarray(
                    self.params[n], dtype=np.float64).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
                raise ValueError(f"{path!r} is not a model checkpoint")
            size = int.from_bytes(fh.read(8), "little")
            header = json.loads(fh.read(size))
            model = cls(ModelConfig(**header["config"]),
                        seed=header["seed"])
            for spec in header["params"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(count * 8), dtype=np.float64)
                model.params[spec["name"]] = data.reshape(shape).copy()
        return model

    def snapshot(self):
        """Deep copy of the parameters (for best-epoch checkpointing)."""
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, snapshot):
        for k, v in snapshot.items():
            self.params[k] = v.copy()
