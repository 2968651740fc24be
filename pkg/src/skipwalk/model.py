"""Recurrent skipping network over KG sequences, trained with type-based NCE.

A batch of token sequences ``e0 r1 e1 r2 ... eL`` (entities in ``[0, n_e)``,
relations in ``[n_e, n_e + n_r)``) goes through

    embed -> input batch norm -> LSTM x2 (dropout after each) -> skip -> output batch norm

and the output at position ``t`` predicts token ``t + 1``: entity positions
score against the relation head, relation positions against the entity
head. The ``skip`` stage depends on the variant:

* ``rsn``: at relation positions ``h' = S h + x_prev`` where ``x_prev`` is
  the (normalised) input vector of the subject entity; entity positions pass
  ``h`` through unchanged.
* ``rnn``: ``h' = h``.
* ``rrn``: ``h' = h + h_prev``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import BatchNormState, LstmLayer, Parameter

VARIANTS = ("rsn", "rnn", "rrn")


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 256
    lr: float = 0.003
    batch: int = 512
    epochs: int = 30
    negatives: int = 64
    dropout: float = 0.2
    variant: str = "rsn"
    seed: int = 0
    dtype: str = "float32"
    layers: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("dim", "batch", "epochs", "negatives", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


class ParityError(ValueError):
    """Sequence does not alternate entity, relation, entity, ..."""


# ---------------------------------------------------------------- noise


class NoiseDistribution:
    """Unigram^0.75 noise over one element type."""

    def __init__(self, counts, power: float = 0.75):
        w = np.asarray(counts, dtype=np.float64) ** power
        if w.sum() <= 0:
            w = np.ones_like(w)
        self.probs = w / w.sum()
        self.size = len(w)
        self._cdf = np.cumsum(self.probs)

    def draw(self, k: int, rng: np.random.Generator) -> np.ndarray:
        idx = np.searchsorted(self._cdf, rng.random(k) * self._cdf[-1], side="right")
        return np.minimum(idx, self.size - 1)


def sample_negatives(noise: NoiseDistribution, k: int, positive: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``k`` noise ids (with replacement) from ``noise`` conditioned on not
    being ``positive``. Ids are local to the element type."""
    if k >= noise.size:
        raise ValueError(f"need more than k={k} candidates, vocabulary has {noise.size}")
    p = noise.probs.copy()
    p[positive] = 0.0
    if p.sum() <= 0:
        p = np.ones_like(p)
        p[positive] = 0.0
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, rng.random(k) * cdf[-1], side="right")
    idx = np.minimum(idx, noise.size - 1)
    # a zero-width bin at ``positive`` can only be hit by rounding at the edge
    idx[idx == positive] = (positive + 1) % noise.size if positive != noise.size - 1 else positive - 1
    return idx


def nce_forward(h, targets, negatives, W, b, neg_mask=None):
    """Per-row loss ``-log s(h.w_y + b_y) - sum_j log s(-(h.w_nj + b_nj))``.

    ``h`` (N, d); ``targets`` (N,); ``negatives`` (k,) shared across rows or
    (N, k) per row; ``neg_mask`` (N, k) zero-weights individual negatives.
    """
    pos = np.einsum("nd,dn->n", h, W[:, targets]) + b[targets]
    if negatives.ndim == 1:
        neg = h @ W[:, negatives] + b[negatives]
    else:
        neg = np.einsum("nd,dnk->nk", h, W[:, negatives]) + b[negatives]
    if neg_mask is None:
        neg_mask = np.ones(neg.shape, dtype=h.dtype)
    loss = -nn.log_sigmoid(pos) - (neg_mask * nn.log_sigmoid(-neg)).sum(axis=1)
    return loss, (h, targets, negatives, W, pos, neg, neg_mask)


def nce_backward(dloss, cache):
    """Returns ``(dh, dW, db)`` for upstream ``dloss`` (N,)."""
    h, targets, negatives, W, pos, neg, neg_mask = nn._need(cache)
    dpos = dloss * (nn.sigmoid(pos) - 1.0)
    dneg = dloss[:, None] * nn.sigmoid(neg) * neg_mask
    V = W.shape[1]
    dh = dpos[:, None] * W[:, targets].T
    if negatives.ndim == 1:
        dh += dneg @ W[:, negatives].T
        ids = np.concatenate([targets, negatives])
        rows = np.concatenate([dpos[:, None] * h, (h.T @ dneg).T])
        bias = np.concatenate([dpos, dneg.sum(axis=0)])
    else:
        dh += np.einsum("nk,dnk->nd", dneg, W[:, negatives])
        ids = np.concatenate([targets, negatives.reshape(-1)])
        rows = np.concatenate([dpos[:, None] * h, (dneg[:, :, None] * h[:, None, :]).reshape(-1, h.shape[1])])
        bias = np.concatenate([dpos, dneg.reshape(-1)])
    dW = nn.scatter_rows(ids, rows, V).T
    db = nn.scatter_rows(ids, bias[:, None], V)[:, 0]
    return dh, np.ascontiguousarray(dW), db


def nce_loss(h, target, negatives, W, b):
    """Scalar loss of one prediction and its gradients ``(loss, dh, dW, db)``."""
    h = np.atleast_2d(h)
    loss, cache = nce_forward(h, np.array([target]), np.asarray(negatives)[None, :], W, b)
    dh, dW, db = nce_backward(np.ones(1, dtype=h.dtype), cache)
    return float(loss[0]), dh[0], dW, db


# ---------------------------------------------------------------- model


@dataclass
class ForwardResult:
    outputs: np.ndarray  # (B, T, d) after output batch norm
    skip_out: np.ndarray  # (B, T, d) h' before output batch norm
    hidden: np.ndarray  # (B, T, d) last LSTM layer output (after dropout)
    cache: dict = field(repr=False, default_factory=dict)


class RsnModel:
    def __init__(self, n_entities: int, n_relations: int, cfg: TrainConfig,
                 rng: np.random.Generator | None = None):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.cfg = cfg
        self.variant = cfg.variant
        dtype = np.dtype(cfg.dtype)
        self.dtype = dtype
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        d = cfg.dim
        self.embedding = Parameter(nn.xavier_init((n_entities + n_relations, d), rng, dtype))
        self.lstm = [LstmLayer(d, d, rng, dtype) for _ in range(cfg.layers)]
        self.skip = Parameter(nn.xavier_init((d, d), rng, dtype))
        self.ent_W = Parameter(nn.xavier_init((d, n_entities), rng, dtype))
        self.ent_b = Parameter(np.zeros(n_entities, dtype=dtype))
        self.rel_W = Parameter(nn.xavier_init((d, n_relations), rng, dtype))
        self.rel_b = Parameter(np.zeros(n_relations, dtype=dtype))
        self.bn_in = BatchNormState.create(d, dtype)
        self.bn_out = BatchNormState.create(d, dtype)

    # -- parameters

    def parameters(self) -> dict[str, Parameter]:
        p = {"embedding": self.embedding}
        for i, layer in enumerate(self.lstm):
            for k, v in layer.parameters().items():
                p[f"lstm{i}.{k}"] = v
        p.update(
            {
                "skip": self.skip,
                "ent.W": self.ent_W,
                "ent.b": self.ent_b,
                "rel.W": self.rel_W,
                "rel.b": self.rel_b,
                "bn_in.scale": self.bn_in.scale,
                "bn_in.shift": self.bn_in.shift,
                "bn_out.scale": self.bn_out.scale,
                "bn_out.shift": self.bn_out.shift,
            }
        )
        return p

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            "bn_in.running_mean": self.bn_in.running_mean,
            "bn_in.running_var": self.bn_in.running_var,
            "bn_out.running_mean": self.bn_out.running_mean,
            "bn_out.running_var": self.bn_out.running_var,
        }

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad[...] = 0

    def entity_embeddings(self) -> np.ndarray:
        return self.embedding.value[: self.n_entities].copy()

    # -- forward / backward

    def check_parity(self, tokens, mask=None):
        ne = self.n_entities
        ent = tokens[:, 0::2]
        rel = tokens[:, 1::2]
        bad_e = (ent < 0) | (ent >= ne)
        bad_r = (rel < ne) | (rel >= ne + self.n_relations)
        if mask is not None:
            bad_e &= mask[:, 0::2]
            bad_r &= mask[:, 1::2]
        if bad_e.any() or bad_r.any():
            raise ParityError("sequences must alternate entity, relation, ... starting with an entity")

    def forward(self, tokens, train: bool, rng: np.random.Generator | None = None,
                mask=None) -> ForwardResult:
        tokens = np.asarray(tokens, dtype=np.int64)
        self.check_parity(tokens, mask)
        B, T = tokens.shape
        d = self.cfg.dim
        rate = self.cfg.dropout if train else 0.0
        rows = None if mask is None else mask.reshape(-1)

        emb, emb_c = nn.embedding_forward(self.embedding.value, tokens)
        self.bn_in.train = train
        xin, bn_in_c = nn.batchnorm_forward(emb.reshape(B * T, d), self.bn_in, rows)
        xin = xin.reshape(B, T, d)

        h = xin
        lstm_c, drop_c = [], []
        for layer in self.lstm:
            h, c = layer.forward(h)
            h, m = nn.dropout_forward(h, rate, rng, train)
            lstm_c.append(c)
            drop_c.append(m)

        if self.variant == "rsn":
            out = h.copy()
            out[:, 1::2] = h[:, 1::2] @ self.skip.value.T + xin[:, 0:T - 1:2]
        elif self.variant == "rrn":
            out = h.copy()
            out[:, 1:] += h[:, :-1]
        else:
            out = h
        self.bn_out.train = train
        y, bn_out_c = nn.batchnorm_forward(out.reshape(B * T, d), self.bn_out, rows)
        cache = dict(emb=emb_c, bn_in=bn_in_c, lstm=lstm_c, drop=drop_c, bn_out=bn_out_c,
                     hidden=h, xin=xin, shape=(B, T))
        return ForwardResult(y.reshape(B, T, d), out, h, cache)

    def backward(self, dy, fr: ForwardResult) -> None:
        """Accumulate parameter gradients from dL/d(outputs)."""
        c = fr.cache
        B, T = c["shape"]
        d = self.cfg.dim
        dout = nn.batchnorm_backward(dy.reshape(B * T, d), c["bn_out"], self.bn_out).reshape(B, T, d)
        h = c["hidden"]
        dxin = np.zeros_like(dout)
        if self.variant == "rsn":
            dh = dout.copy()
            dr = dout[:, 1::2]
            dh[:, 1::2] = dr @ self.skip.value
            self.skip.grad += dr.reshape(-1, d).T @ h[:, 1::2].reshape(-1, d)
            dxin[:, 0:T - 1:2] += dr
        elif self.variant == "rrn":
            dh = dout.copy()
            dh[:, :-1] += dout[:, 1:]
        else:
            dh = dout
        for layer, lc, m in zip(reversed(self.lstm), reversed(c["lstm"]), reversed(c["drop"])):
            dh = layer.backward(nn.dropout_backward(dh, m), lc)
        dxin += dh
        demb = nn.batchnorm_backward(dxin.reshape(B * T, d), c["bn_in"], self.bn_in)
        self.embedding.grad += nn.embedding_backward(demb, c["emb"])

    def loss_and_grads(self, tokens, rng: np.random.Generator, ent_noise: NoiseDistribution,
                       rel_noise: NoiseDistribution, mask=None) -> tuple[float, int]:
        """Train-mode forward, type-based NCE over every position, backward.
        Gradients are for the mean per-prediction loss. Returns
        ``(mean loss, number of predictions)``."""
        tokens = np.asarray(tokens, dtype=np.int64)
        B, T = tokens.shape
        ne = self.n_entities
        fr = self.forward(tokens, True, rng, mask)
        y = fr.outputs
        valid = np.ones((B, T - 1), dtype=bool) if mask is None else mask[:, 1:] & mask[:, :-1]
        n_pred = int(valid.sum())
        if n_pred == 0:
            return 0.0, 0
        k = self.cfg.negatives
        dy = np.zeros_like(y)
        total = 0.0
        # even positions predict a relation, odd positions an entity
        for start, W, b, noise, offset in (
            (0, self.rel_W, self.rel_b, rel_noise, ne),
            (1, self.ent_W, self.ent_b, ent_noise, 0),
        ):
            pos_t = np.arange(start, T - 1, 2)
            sel = valid[:, pos_t]
            h = y[:, pos_t][sel]
            tgt = tokens[:, pos_t + 1][sel] - offset
            if offset:
                assert (tgt >= 0).all(), "entity position scored against the entity head"
            else:
                assert (tgt < ne).all(), "relation position scored against the relation head"
            kk = min(k, noise.size - 1)
            negs = noise.draw(kk, rng)
            nmask = (negs[None, :] != tgt[:, None]).astype(y.dtype)
            loss, cache = nce_forward(h, tgt, negs, W.value, b.value, nmask)
            total += float(loss.sum())
            dh, dW, db = nce_backward(np.full(len(tgt), 1.0 / n_pred, dtype=y.dtype), cache)
            W.grad += dW
            b.grad += db
            g = np.zeros((B, len(pos_t), y.shape[2]), dtype=y.dtype)
            g[sel] = dh
            dy[:, pos_t] = g
        self.backward(dy, fr)
        return total / n_pred, n_pred

    def step(self, lr: float | None = None) -> None:
        lr = self.cfg.lr if lr is None else lr
        for p in self.parameters().values():
            nn.adam_step(p, lr)

    # -- inference

    def score_objects(self, subjects, relations, batch: int = 4096) -> np.ndarray:
        """Entity-head scores for queries ``(s, r, ?)``; relations are local
        ids. Runs the infer-mode forward on the two-token sequence ``s r``."""
        subjects = np.asarray(subjects, dtype=np.int64)
        relations = np.asarray(relations, dtype=np.int64)
        out = np.empty((len(subjects), self.n_entities), dtype=self.dtype)
        for i in range(0, len(subjects), batch):
            tok = np.stack([subjects[i:i + batch], relations[i:i + batch] + self.n_entities], axis=1)
            y = self.forward(tok, train=False).outputs[:, 1]
            out[i:i + batch] = y @ self.ent_W.value + self.ent_b.value
        return out

    # -- persistence

    def save(self, path, extra_meta: dict[str, int] | None = None) -> None:
        arrays = {k: p.value for k, p in self.parameters().items()}
        arrays.update(self.buffers())
        for k, p in self.parameters().items():
            arrays[f"adam_m/{k}"] = p.adam_m
            arrays[f"adam_v/{k}"] = p.adam_v
        meta = {
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "dim": self.cfg.dim,
            "layers": self.cfg.layers,
            "variant": VARIANTS.index(self.variant),
            "adam_step": self.embedding.step_count,
        }
        meta.update(extra_meta or {})
        nn.save_archive(arrays, path, meta)

    @classmethod
    def load(cls, path, cfg: TrainConfig | None = None) -> tuple["RsnModel", dict[str, int]]:
        arrays, meta = nn.load_archive(path)
        base = cfg or TrainConfig()
        cfg = TrainConfig(**{**base.__dict__, "dim": meta["dim"], "layers": meta["layers"],
                             "variant": VARIANTS[meta["variant"]],
                             "dtype": str(arrays["embedding"].dtype)})
        model = cls(meta["n_entities"], meta["n_relations"], cfg, np.random.default_rng(0))
        model.load_arrays(arrays, meta.get("adam_step", 0))
        return model, meta

    def load_arrays(self, arrays: dict[str, np.ndarray], adam_step: int = 0) -> None:
        for k, p in self.parameters().items():
            if arrays[k].shape != p.value.shape:
                raise ValueError(f"checkpoint shape mismatch for {k}: {arrays[k].shape} vs {p.value.shape}")
            p.value[...] = arrays[k]
            if f"adam_m/{k}" in arrays:
                p.adam_m[...] = arrays[f"adam_m/{k}"]
                p.adam_v[...] = arrays[f"adam_v/{k}"]
            p.step_count = adam_step
        for k, buf in self.buffers().items():
            buf[...] = arrays[k]


# ---------------------------------------------------------------- training


def noise_from_graph(g) -> tuple[NoiseDistribution, NoiseDistribution]:
    """Unigram counts as targets: entity in-degree, relation edge count."""
    ent = np.bincount(g.dst, minlength=g.n_entities)
    rel = np.bincount(g.rel, minlength=g.n_relations)
    return NoiseDistribution(ent), NoiseDistribution(rel)


def train_epoch(corpus_tokens: np.ndarray, model: RsnModel, cfg: TrainConfig,
                rng: np.random.Generator, ent_noise: NoiseDistribution,
                rel_noise: NoiseDistribution, mask=None) -> float:
    """Shuffle, batch, update after every batch. Returns the mean loss per
    prediction over the epoch."""
    if len(corpus_tokens) == 0:
        raise ValueError("empty corpus")
    order = rng.permutation(len(corpus_tokens))
    total, count = 0.0, 0
    for i in range(0, len(order), cfg.batch):
        idx = order[i:i + cfg.batch]
        if len(idx) < 2:
            continue  # batch norm needs two rows
        m = None if mask is None else mask[idx]
        loss, n = model.loss_and_grads(corpus_tokens[idx], rng, ent_noise, rel_noise, m)
        model.step(cfg.lr)
        total += loss * n
        count += n
    return total / max(count, 1)


def pad_sequences(seqs: list, n_entities: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad variable-length token sequences; returns (tokens, mask)."""
    T = max(len(s) for s in seqs)
    tok = np.zeros((len(seqs), T), dtype=np.int64)
    tok[:, 1::2] = n_entities
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        tok[i, :len(s)] = s
        mask[i, :len(s)] = True
    return tok, mask
