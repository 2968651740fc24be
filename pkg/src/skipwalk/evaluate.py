"""Alignment retrieval and filtered KG-completion metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class RankingResult:
    hits1: float  # percent
    hits10: float  # percent
    mrr: float
    n: int
    direction: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def table(self) -> str:
        head = f"{'direction':<10} {'n':>7} {'Hits@1':>8} {'Hits@10':>8} {'MRR':>7}"
        row = f"{self.direction or '-':<10} {self.n:>7d} {self.hits1:>8.2f} {self.hits10:>8.2f} {self.mrr:>7.4f}"
        return head + "\n" + row


class ZeroNormError(ValueError):
    pass


def mrr(ranks) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("mrr of an empty rank list")
    if (r < 1).any():
        raise ValueError("ranks must be >= 1")
    return float(np.mean(1.0 / r))


def hits_at(ranks, k: int) -> float:
    r = np.asarray(ranks)
    if r.size == 0:
        raise ValueError("hits of an empty rank list")
    return float(100.0 * np.mean(r <= k))


def summarize(ranks, direction: str = "") -> RankingResult:
    ranks = np.asarray(ranks)
    return RankingResult(hits_at(ranks, 1), hits_at(ranks, 10), mrr(ranks), int(ranks.size), direction)


def ranks_from_scores(scores: np.ndarray, answers: np.ndarray) -> np.ndarray:
    """Rank (1-based) of ``answers[i]`` in row ``i`` of ``scores``, higher
    is better, ties broken in favour of the smaller column index."""
    scores = np.asarray(scores)
    answers = np.asarray(answers)
    rows = np.arange(len(answers))
    s = scores[rows, answers][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    better = (scores > s) | ((scores == s) & (cols < answers[:, None]))
    return better.sum(axis=1) + 1


def _unit_rows(emb: np.ndarray, ids: np.ndarray, label) -> np.ndarray:
    x = emb[ids].astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0).any():
        bad = int(ids[np.flatnonzero(norms == 0)[0]])
        raise ZeroNormError(f"entity {label(bad)} has a zero-norm embedding")
    return x / norms[:, None]


def alignment_ranks(embeddings: np.ndarray, sources: np.ndarray, targets: np.ndarray,
                    candidates: np.ndarray, label=str) -> np.ndarray:
    """Rank of each true target among ``candidates`` by cosine similarity to
    its source. Candidate ties are broken by entity id."""
    candidates = np.asarray(candidates)
    order = np.argsort(candidates, kind="stable")
    candidates = candidates[order]
    pos = np.searchsorted(candidates, targets)
    if (pos >= len(candidates)).any() or (candidates[np.minimum(pos, len(candidates) - 1)] != targets).any():
        raise ValueError("every true target must be a candidate")
    src = _unit_rows(embeddings, np.asarray(sources), label)
    cand = _unit_rows(embeddings, candidates, label)
    ranks = np.empty(len(sources), dtype=np.int64)
    step = 1024
    for i in range(0, len(sources), step):
        sims = src[i:i + step] @ cand.T
        ranks[i:i + step] = ranks_from_scores(sims, pos[i:i + step])
    return ranks


def align_entities(embeddings: np.ndarray, test_pairs: np.ndarray, n1: int, n2: int,
                   direction: str = "1->2", label=str) -> RankingResult:
    """Cross-KG retrieval. ``test_pairs`` holds joint ids ``(kg1 id, kg2 id)``;
    KG1 entities are ``[0, n1)`` and KG2 entities ``[n1, n1 + n2)``.
    ``direction`` is ``"1->2"``, ``"2->1"`` or ``"mean"``."""
    test_pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if direction == "mean":
        a = align_entities(embeddings, test_pairs, n1, n2, "1->2", label)
        b = align_entities(embeddings, test_pairs, n1, n2, "2->1", label)
        return RankingResult((a.hits1 + b.hits1) / 2, (a.hits10 + b.hits10) / 2,
                             (a.mrr + b.mrr) / 2, a.n, "mean")
    if direction == "1->2":
        src, tgt, cand = test_pairs[:, 0], test_pairs[:, 1], np.arange(n1, n1 + n2)
    elif direction == "2->1":
        src, tgt, cand = test_pairs[:, 1], test_pairs[:, 0], np.arange(n1)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return summarize(alignment_ranks(embeddings, src, tgt, cand, label), direction)


def filtered_ranks(scores: np.ndarray, answers: np.ndarray, known: list) -> tuple[np.ndarray, np.ndarray]:
    """``(raw, filtered)`` ranks. ``known[i]`` lists every true answer of
    query ``i``; all of them except ``answers[i]`` are removed from the
    candidate list before ranking."""
    scores = np.array(scores, dtype=np.float64, copy=True)
    raw = ranks_from_scores(scores, answers)
    for i, ks in enumerate(known):
        ks = np.asarray([k for k in ks if k != answers[i]], dtype=np.int64)
        if ks.size:
            scores[i, ks] = -np.inf
    return raw, ranks_from_scores(scores, answers)


def known_objects(triples: np.ndarray) -> dict[tuple[int, int], set[int]]:
    out: dict[tuple[int, int], set[int]] = {}
    for s, r, o in np.asarray(triples).tolist():
        out.setdefault((s, r), set()).add(o)
    return out


def complete_triples(model, queries: np.ndarray, n_base_relations: int, known_triples: np.ndarray,
                     side: str = "both", batch: int = 2048) -> tuple[RankingResult, np.ndarray]:
    """Filtered completion of test triples ``(s, r, o)`` (base relation ids).

    Object queries ``(s, r, ?)`` run ``s -> r``; subject queries ``(?, r, o)``
    are rewritten as ``(o, r + n_base_relations, ?)`` via the reverse
    relation. ``known_triples`` must already contain the reverses of every
    known triple. Returns the summary and the filtered rank array.
    """
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    if len(queries) == 0:
        raise ValueError("no completion queries")
    if queries[:, [0, 2]].max() >= model.n_entities or queries[:, 1].max() >= n_base_relations:
        raise ValueError("completion query references an unknown entity or relation")
    qs = []
    if side in ("both", "object"):
        qs.append(queries)
    if side in ("both", "subject"):
        qs.append(np.stack([queries[:, 2], queries[:, 1] + n_base_relations, queries[:, 0]], axis=1))
    q = np.concatenate(qs)
    known = known_objects(known_triples)
    ranks = np.empty(len(q), dtype=np.int64)
    for i in range(0, len(q), batch):
        chunk = q[i:i + batch]
        scores = model.score_objects(chunk[:, 0], chunk[:, 1])
        ks = [known.get((s, r), ()) for s, r, _ in chunk.tolist()]
        ranks[i:i + batch] = filtered_ranks(scores, chunk[:, 2], ks)[1]
    return summarize(ranks, side), ranks


def frequency_baseline_ranks(queries: np.ndarray, n_base_relations: int, known_triples: np.ndarray,
                             n_entities: int, side: str = "both", counts_from=None) -> np.ndarray:
    """Filtered ranks of a model-free ranker that orders candidates by how
    often they occur as an answer in ``counts_from`` (default
    ``known_triples``; pass the training triples to keep test answers out
    of the counts)."""
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    src = known_triples if counts_from is None else counts_from
    freq = np.bincount(np.asarray(src)[:, 2], minlength=n_entities).astype(np.float64)
    qs = []
    if side in ("both", "object"):
        qs.append(queries)
    if side in ("both", "subject"):
        qs.append(np.stack([queries[:, 2], queries[:, 1] + n_base_relations, queries[:, 0]], axis=1))
    q = np.concatenate(qs)
    known = known_objects(known_triples)
    scores = np.broadcast_to(freq, (len(q), n_entities))
    ks = [known.get((s, r), ()) for s, r, _ in q.tolist()]
    return filtered_ranks(scores, q[:, 2], ks)[1]
