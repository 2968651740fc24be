"""Second-order biased random walks over a joint graph.

At entity ``v``, reached from ``t``, the unnormalised mass of an outgoing
edge ``(v, r, x)`` is ``depth_bias(t, x) * cross_bias(t, x) * w`` with
``w = 1``. Depth bias favours ``x`` two hops from ``t``; cross bias favours
``x`` in the other KG than ``t``. The first step of a walk is uniform over
edges. Walk length counts relation steps, so a walk of length ``L`` is a
sequence of ``2L + 1`` ids: ``e0 r1 e1 ... rL eL``.

The sampling loop runs in a compiled kernel when available and in pure
Python otherwise (set ``SKIPWALK_PURE=1`` to force the latter). Both share
the SplitMix64 streams of :mod:`skipwalk.rng`, one per ``(seed, start)``,
so they emit identical corpora and serial/parallel orderings agree.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import _walk_py
from .kg import JointGraph

log = logging.getLogger(__name__)

_kernel = _walk_py
if not os.environ.get("SKIPWALK_PURE"):
    try:
        from . import _walkcore as _kernel  # type: ignore[no-redef]
    except ImportError:  # extension not built
        pass

BACKEND = _kernel.BACKEND


def kernel(backend: str | None = None):
    """Kernel module by name (``"cython"``/``"python"``), default the active one."""
    if backend is None:
        return _kernel
    if backend == "python":
        return _walk_py
    if backend == "cython":
        from . import _walkcore
        return _walkcore
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class WalkConfig:
    alpha: float = 0.9
    beta: float = 0.9
    length: int = 15
    walks_per_entity: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.walks_per_entity < 1:
            raise ValueError(f"walks_per_entity must be >= 1, got {self.walks_per_entity}")


@dataclass
class StepDistribution:
    candidates: list[tuple[int, int]]  # (relation id, next entity id), one per edge
    probabilities: np.ndarray

    def as_dict(self) -> dict[tuple[int, int], float]:
        """Probability per distinct (relation, entity); parallel edges summed."""
        out: dict[tuple[int, int], float] = {}
        for c, p in zip(self.candidates, self.probabilities.tolist()):
            out[c] = out.get(c, 0.0) + p
        return out


def _is_neighbor(g: JointGraph, t: int, x: int) -> bool:
    ip, nb = g.undirected_neighbors()
    lo, hi = ip[t], ip[t + 1]
    i = lo + np.searchsorted(nb[lo:hi], x)
    return bool(i < hi and nb[i] == x)


def dist2(t: int, x: int, g: JointGraph) -> int:
    """Shortest-path distance capped at 2, edges taken as undirected."""
    if t == x:
        return 0
    return 1 if _is_neighbor(g, t, x) else 2


def depth_bias(t: int, x: int, alpha: float, g: JointGraph) -> float:
    return alpha if dist2(t, x, g) == 2 else 1.0 - alpha


def cross_bias(t: int, x: int, beta: float, membership) -> float:
    return beta if membership[t] != membership[x] else 1.0 - beta


def step_distribution(v: int, t: int | None, g: JointGraph, cfg: WalkConfig) -> StepDistribution:
    lo, hi = g.indptr[v], g.indptr[v + 1]
    if hi == lo:
        raise ValueError(f"dead end: entity {v} has no outgoing edge")
    cands = list(zip(g.rel[lo:hi].tolist(), g.dst[lo:hi].tolist()))
    if t is None:
        mass = np.ones(len(cands))
    else:
        mass = np.array(
            [
                depth_bias(t, x, cfg.alpha, g) * cross_bias(t, x, cfg.beta, g.membership)
                for _, x in cands
            ]
        )
    return StepDistribution(cands, mass / mass.sum())


def _run(g: JointGraph, starts: np.ndarray, cfg: WalkConfig, walks_per_entity: int,
         seed: int, backend: str | None) -> np.ndarray:
    nip, nb = g.undirected_neighbors()
    return kernel(backend).walk_corpus(
        g.indptr, g.rel, g.dst, nip, nb,
        np.ascontiguousarray(g.membership, dtype=np.int8),
        np.ascontiguousarray(starts, dtype=np.int64),
        int(walks_per_entity), int(cfg.length), float(cfg.alpha), float(cfg.beta),
        int(seed),
    )


def sample_walk(start: int, g: JointGraph, cfg: WalkConfig, rng: int | None = None,
                backend: str | None = None) -> np.ndarray:
    """One walk of ``2 * cfg.length + 1`` ids. ``rng`` is a stream seed
    (defaults to ``cfg.seed``)."""
    if not 0 <= start < g.n_entities:
        raise ValueError(f"start entity {start} out of range")
    if g.indptr[start + 1] == g.indptr[start]:
        raise ValueError(f"start entity {start} is isolated")
    seed = cfg.seed if rng is None else rng
    return _run(g, np.array([start]), cfg, 1, seed, backend)[0]


def generate_corpus(g: JointGraph, cfg: WalkConfig, rng: int | None = None,
                    backend: str | None = None) -> np.ndarray:
    """``walks_per_entity`` walks from every non-isolated entity, ordered by
    start entity. Returns an int64 array of shape ``(n_walks, 2L + 1)``."""
    seed = cfg.seed if rng is None else rng
    deg = g.out_degree()
    starts = np.flatnonzero(deg > 0)
    skipped = g.n_entities - len(starts)
    if skipped:
        log.info("skipped %d isolated entities", skipped)
    return _run(g, starts, cfg, cfg.walks_per_entity, seed, backend)


# ------------------------------------------------------------------ corpus file


def to_tokens(corpus: np.ndarray, n_entities: int) -> np.ndarray:
    """Map a walk array into one token space: entities ``[0, n_e)``,
    relations shifted to ``[n_e, n_e + n_r)``."""
    tok = corpus.copy()
    tok[:, 1::2] += n_entities
    return tok


def write_corpus(corpus: np.ndarray, path, n_entities: int, debug: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if debug:
            for seq in corpus.tolist():
                fh.write(" ".join(("E" if i % 2 == 0 else "R") + str(x) for i, x in enumerate(seq)) + "\n")
        else:
            for seq in to_tokens(corpus, n_entities).tolist():
                fh.write(" ".join(map(str, seq)) + "\n")


def read_corpus(path, n_entities: int) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0][0] in "ER":
                rows.append([int(p[1:]) for p in parts])
            else:
                seq = [int(p) for p in parts]
                rows.append([x - n_entities if i % 2 else x for i, x in enumerate(seq)])
    return np.array(rows, dtype=np.int64)
