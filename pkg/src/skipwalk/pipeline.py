"""End-to-end alignment and completion runs built from the lower modules."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import walker
from .evaluate import RankingResult, align_entities
from .kg import (JointGraph, Kg, PriorAlignment, add_reverse_relations,
                 build_joint_graph)
from .model import RsnModel, TrainConfig, noise_from_graph, train_epoch
from .rng import derive_seed
from .walker import WalkConfig

log = logging.getLogger(__name__)


def split_alignment(pairs: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split into ``(prior, test)``; ``round(fraction * n)`` prior pairs."""
    if not 0 < fraction < 1:
        raise ValueError(f"prior fraction must be in (0, 1), got {fraction}")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    perm = np.random.default_rng(seed).permutation(len(pairs))
    n = int(round(fraction * len(pairs)))
    return pairs[np.sort(perm[:n])], pairs[np.sort(perm[n:])]


@dataclass
class AlignmentTask:
    kg1: Kg
    kg2: Kg
    prior: np.ndarray  # local ids (kg1, kg2)
    test: np.ndarray  # local ids (kg1, kg2)
    graph: JointGraph = field(init=False)

    def __post_init__(self):
        self.graph = build_joint_graph(
            add_reverse_relations(self.kg1), add_reverse_relations(self.kg2), PriorAlignment(self.prior)
        )

    @property
    def test_joint(self) -> np.ndarray:
        return self.test + np.array([0, self.kg1.n_entities])

    def evaluate(self, model: RsnModel, direction: str = "1->2") -> RankingResult:
        return align_entities(model.entity_embeddings(), self.test_joint, self.kg1.n_entities,
                              self.kg2.n_entities, direction, self.graph.entity_label)

    @classmethod
    def from_pairs(cls, kg1: Kg, kg2: Kg, pairs: np.ndarray, fraction: float, seed: int):
        prior, test = split_alignment(pairs, fraction, seed)
        return cls(kg1, kg2, prior, test)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    seconds: float
    metrics: RankingResult | None = None


def fit(graph: JointGraph, walk_cfg: WalkConfig, train_cfg: TrainConfig,
        model: RsnModel | None = None, start_epoch: int = 0,
        on_epoch: Callable[[RsnModel, EpochRecord], None] | None = None,
        max_predictions: int | None = None) -> tuple[RsnModel, list[EpochRecord]]:
    """Train for ``train_cfg.epochs`` epochs, drawing a fresh walk corpus per
    epoch. ``max_predictions`` caps predicted positions per epoch by
    subsampling walks (used to compare walk lengths at equal budget)."""
    if model is None:
        model = RsnModel(graph.n_entities, graph.n_relations, train_cfg,
                         np.random.default_rng(train_cfg.seed))
    ent_noise, rel_noise = noise_from_graph(graph)
    history = []
    for epoch in range(start_epoch, train_cfg.epochs):
        t0 = time.perf_counter()
        corpus = walker.generate_corpus(graph, walk_cfg, rng=derive_seed(walk_cfg.seed, epoch))
        rng = np.random.default_rng(derive_seed(train_cfg.seed, 1_000_003, epoch))
        if max_predictions is not None:
            per_walk = corpus.shape[1] - 1
            n = min(len(corpus), max(max_predictions // per_walk, 2))
            corpus = corpus[np.sort(rng.choice(len(corpus), size=n, replace=False))]
        tokens = walker.to_tokens(corpus, graph.n_entities)
        loss = train_epoch(tokens, model, train_cfg, rng, ent_noise, rel_noise)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}")
        rec = EpochRecord(epoch + 1, loss, time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(model, rec)
        log.info("epoch=%d loss=%.6f seconds=%.3f", rec.epoch, rec.loss, rec.seconds)
        history.append(rec)
    return model, history


def run_alignment(task: AlignmentTask, walk_cfg: WalkConfig, train_cfg: TrainConfig,
                  eval_every: int = 1, direction: str = "1->2",
                  max_predictions: int | None = None) -> tuple[RsnModel, list[EpochRecord]]:
    def record(model, rec):
        if eval_every and rec.epoch % eval_every == 0:
            rec.metrics = task.evaluate(model, direction)

    return fit(task.graph, walk_cfg, train_cfg, on_epoch=record, max_predictions=max_predictions)


def completion_walk_config(cfg: WalkConfig) -> WalkConfig:
    """Completion drops the cross-KG bias (a constant 0.5 cancels out)."""
    return replace(cfg, beta=0.5)
