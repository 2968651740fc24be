"""Segment-based random PageRank (SRP) sampling of benchmark KG couples.

Entities are split into degree segments and each segment is sampled on its
own by a random walk with restart, so the high-degree bias of PageRank
cannot skew the degree profile. Samples are accepted when the
Kolmogorov-Smirnov distance between the sampled KG's degree distribution
and the source's is at most ``epsilon``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .kg import Kg
from .rng import derive_seed
from .walker import kernel

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    def __init__(self, msg: str, stats: dict | None = None):
        super().__init__(msg)
        self.stats = stats or {}


@dataclass(frozen=True)
class SrpConfig:
    target_entities: int = 15000
    segments: int = 10
    epsilon: float = 0.05
    damping: float = 0.85
    dense: bool = False
    seed: int = 0
    retries: int = 10
    max_steps_factor: int = 200  # walk steps allowed per wanted entity
    stall_steps: int = 50  # fresh start after this many steps without a new entity

    def __post_init__(self):
        if self.segments < 1 or self.target_entities < self.segments:
            raise ValueError("need target_entities >= segments >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if not 0 < self.damping < 1:
            raise ValueError("damping must be in (0, 1)")
        if self.retries < 1 or self.stall_steps < 1 or self.max_steps_factor < 1:
            raise ValueError("retries, stall_steps and max_steps_factor must be positive")


@dataclass
class DegreeDistribution:
    """Empirical distribution of entity degrees."""

    degrees: np.ndarray

    def __post_init__(self):
        self.degrees = np.sort(np.asarray(self.degrees, dtype=np.int64))

    @classmethod
    def of(cls, kg: Kg) -> "DegreeDistribution":
        return cls(kg.degrees())

    def __len__(self):
        return len(self.degrees)

    @property
    def support(self) -> np.ndarray:
        return np.unique(self.degrees)

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.degrees, np.asarray(x), side="right") / len(self.degrees)


def ks_statistic(a: DegreeDistribution, b: DegreeDistribution) -> float:
    """``sup |F_a - F_b|`` over the union of both supports."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("K-S statistic of an empty distribution")
    pts = np.union1d(a.support, b.support)
    return float(np.max(np.abs(a.cdf(pts) - b.cdf(pts))))


def segment_by_degree(degrees: np.ndarray, segments: int, ids: np.ndarray | None = None) -> list[np.ndarray]:
    """Partition ``ids`` (default all) into ``segments`` runs of near-equal
    size after sorting by ``(degree, id)``."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    degrees = np.asarray(degrees)
    ids = np.arange(len(degrees)) if ids is None else np.asarray(ids, dtype=np.int64)
    order = np.lexsort((ids, degrees[ids]))
    return [np.sort(s) for s in np.array_split(ids[order], segments)]


def proportional_quota(sizes, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` proportional to ``sizes``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    exact = sizes * total / sizes.sum()
    q = np.floor(exact).astype(np.int64)
    rem = total - q.sum()
    if rem:
        q[np.argsort(-(exact - q), kind="stable")[:rem]] += 1
    return np.minimum(q, sizes.astype(np.int64))


def _undirected(kg: Kg):
    t = kg.triples
    n = kg.n_entities
    a = np.concatenate([t[:, 0], t[:, 2]])
    b = np.concatenate([t[:, 2], t[:, 0]])
    order = np.argsort(a, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
    return indptr, np.ascontiguousarray(b[order])


def random_pagerank_sample(kg: Kg, cfg: SrpConfig, seed: int | None = None,
                           candidates: np.ndarray | None = None,
                           stats: dict | None = None, backend: str | None = None) -> np.ndarray:
    """Sorted entity ids. Entities are split into degree segments; for each
    segment a random walk with restart (restart to the walk's start node,
    probability ``1 - damping``) starts from that segment's members and
    accumulates distinct unvisited entities until the segment's
    proportional quota is met. Starting every segment separately keeps the
    PageRank pull toward hubs from skewing the degree profile, while the
    walk itself keeps neighbourhoods together so the induced subgraph stays
    as dense as the source. ``candidates`` restricts which entities may be
    collected (e.g. aligned ones)."""
    seed = cfg.seed if seed is None else seed
    n = kg.n_entities
    cand = np.arange(n) if candidates is None else np.unique(np.asarray(candidates, dtype=np.int64))
    if cfg.target_entities > len(cand):
        raise ValueError(f"target {cfg.target_entities} exceeds {len(cand)} candidate entities")
    deg = kg.degrees()
    segs = segment_by_degree(deg, cfg.segments, cand)
    quota = proportional_quota([len(s) for s in segs], cfg.target_entities)
    eligible = np.zeros(n, dtype=np.uint8)
    eligible[cand] = 1
    taken = np.zeros(n, dtype=np.uint8)
    indptr, nbrs = _undirected(kg)
    rng = np.random.default_rng(seed)
    out = []
    fallback = 0
    steps_total = 0
    k = kernel(backend)
    for i, (s, q) in enumerate(zip(segs, quota)):
        if q == 0:
            continue
        got, steps = k.restart_walk_collect(indptr, nbrs, eligible, taken, s, int(q), cfg.damping,
                                            cfg.stall_steps, int(q) * cfg.max_steps_factor,
                                            int(seed), i)
        steps_total += steps
        if len(got) < q:
            # starved walk: top up by degree-weighted draws, own segment first
            rest = s[taken[s] == 0]
            if len(rest) < q - len(got):
                rest = cand[taken[cand] == 0]
            w = deg[rest].astype(np.float64) + 1.0
            extra = rng.choice(rest, size=int(q) - len(got), replace=False, p=w / w.sum())
            taken[extra] = 1
            fallback += len(extra)
            got = np.concatenate([got, extra])
        out.append(got)
    if stats is not None:
        stats["walk_steps"] = int(steps_total)
        stats["fallback_entities"] = int(fallback)
    return np.sort(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)


def densify(kg: Kg, seed: int = 0, segments: int = 10, factor: float = 2.0) -> Kg:
    """Delete uniformly chosen entities of the lowest-degree segment (with
    their triples) until the average degree reaches ``factor`` times the
    original. Entities left without triples are dropped as well."""
    n0 = kg.n_entities
    target = factor * 2.0 * kg.n_triples / n0
    t = kg.triples
    alive = np.ones(n0, dtype=bool)
    tri_alive = np.ones(len(t), dtype=bool)
    deg = kg.degrees().astype(np.int64)
    n_alive, n_tri = n0, len(t)
    inc_ptr, inc = _incidence(kg)
    rng = np.random.default_rng(seed)

    def avg():
        return 2.0 * n_tri / n_alive if n_alive else 0.0

    base = 2.0 * kg.n_triples / n0
    best = avg()
    while avg() < target:
        best = max(best, avg())
        ids = np.flatnonzero(alive)
        if len(ids) < 2:
            raise SamplingError(f"densify exhausted the graph; best average-degree ratio reached {best / base:.3f}")
        lowest = segment_by_degree(deg, min(segments, len(ids)), ids)[0]
        removed_any = False
        for e in rng.permutation(lowest):
            if not alive[e]:
                continue
            for ti in inc[inc_ptr[e]:inc_ptr[e + 1]]:
                if tri_alive[ti]:
                    tri_alive[ti] = False
                    n_tri -= 1
                    s, o = t[ti, 0], t[ti, 2]
                    deg[s] -= 1
                    deg[o] -= 1
            alive[e] = False
            n_alive -= 1
            removed_any = True
            # neighbours may have lost their last triple
            orphans = np.flatnonzero(alive & (deg == 0))
            if len(orphans):
                alive[orphans] = False
                n_alive -= len(orphans)
            best = max(best, avg())
            if avg() >= target or n_alive < 2:
                break
        if not removed_any:
            raise SamplingError("densify made no progress")
    return kg.subgraph(np.flatnonzero(alive))


def _incidence(kg: Kg):
    t = kg.triples
    ends = np.concatenate([t[:, 0], t[:, 2]])
    tid = np.concatenate([np.arange(len(t)), np.arange(len(t))])
    order = np.argsort(ends, kind="stable")
    ptr = np.zeros(kg.n_entities + 1, dtype=np.int64)
    np.cumsum(np.bincount(ends, minlength=kg.n_entities), out=ptr[1:])
    return ptr, tid[order]


@dataclass
class SampledCouple:
    kg1: Kg
    kg2: Kg
    alignment: np.ndarray  # local ids in the sampled KGs
    stats: dict = field(default_factory=dict)

    def stats_json(self) -> str:
        return json.dumps(self.stats, indent=2, sort_keys=True)


def sample_dataset(kg1: Kg, kg2: Kg, full_alignment: np.ndarray, cfg: SrpConfig) -> SampledCouple:
    """Sample an alignment-closed couple: SRP on the aligned entities of
    ``kg1``, counterparts forced into ``kg2``, induced subgraphs on both
    sides. Retries with derived seeds until both sides pass K-S."""
    pairs = np.asarray(full_alignment, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("full alignment is empty")
    base = {"seed": cfg.seed, "dense": cfg.dense, "epsilon": cfg.epsilon}
    src1, src2 = kg1, kg2
    if cfg.dense:
        orig = [2.0 * k.n_triples / k.n_entities for k in (kg1, kg2)]
        kg1 = densify(kg1, derive_seed(cfg.seed, 1), cfg.segments)
        kg2 = densify(kg2, derive_seed(cfg.seed, 2), cfg.segments)
        pairs = _remap_pairs(pairs, src1, src2, kg1, kg2)
        base["avg_degree_original"] = orig
        base["avg_degree_dense"] = [2.0 * k.n_triples / k.n_entities for k in (kg1, kg2)]
    # K-S reference: the (possibly densified) source
    ref1, ref2 = DegreeDistribution.of(kg1), DegreeDistribution.of(kg2)
    to2 = np.full(kg1.n_entities, -1, dtype=np.int64)
    to2[pairs[:, 0]] = pairs[:, 1]
    best = None
    for attempt in range(cfg.retries):
        seed = cfg.seed if attempt == 0 else derive_seed(cfg.seed, 7919, attempt)
        st: dict = {}
        keep1 = random_pagerank_sample(kg1, cfg, seed, candidates=pairs[:, 0], stats=st)
        s1, s2, kept_pairs = _closed_induced(kg1, kg2, keep1, to2)
        ks1 = ks_statistic(DegreeDistribution.of(s1), ref1)
        ks2 = ks_statistic(DegreeDistribution.of(s2), ref2)
        stats = {
            **base,
            "attempt": attempt + 1,
            "attempt_seed": int(seed),
            "ks": [ks1, ks2],
            "kg1": {"entities": s1.n_entities, "relations": s1.n_relations, "triples": s1.n_triples},
            "kg2": {"entities": s2.n_entities, "relations": s2.n_relations, "triples": s2.n_triples},
            "alignment": int(len(kept_pairs)),
            **st,
        }
        log.info("srp attempt %d: ks=%.4f/%.4f", attempt + 1, ks1, ks2)
        if best is None or max(ks1, ks2) < max(best.stats["ks"]):
            best = SampledCouple(s1, s2, kept_pairs, stats)
        if max(ks1, ks2) <= cfg.epsilon:
            return best
    raise SamplingError(
        f"K-S {max(best.stats['ks']):.4f} > epsilon {cfg.epsilon} after {cfg.retries} attempts",
        best.stats,
    )


def _closed_induced(kg1: Kg, kg2: Kg, keep1: np.ndarray, to2: np.ndarray):
    """Induced subgraphs on ``keep1`` and its counterparts, minus entities
    the cut leaves without triples. Dropping an entity drops its
    counterpart too, repeated until stable, so the result stays
    alignment-closed."""
    keep1 = np.sort(keep1)
    while True:
        keep2 = to2[keep1]
        d1 = _induced_degree(kg1, keep1)
        d2 = _induced_degree(kg2, keep2)
        ok = (d1[keep1] > 0) & (d2[keep2] > 0)
        if ok.all():
            break
        keep1 = keep1[ok]
    s1, s2 = kg1.subgraph(keep1), kg2.subgraph(np.sort(keep2))
    pairs = np.stack([keep1, keep2], axis=1)
    return s1, s2, _remap_pairs(pairs, kg1, kg2, s1, s2)


def _induced_degree(kg: Kg, keep: np.ndarray) -> np.ndarray:
    inside = np.zeros(kg.n_entities, dtype=bool)
    inside[keep] = True
    t = kg.triples[inside[kg.triples[:, 0]] & inside[kg.triples[:, 2]]]
    return np.bincount(t[:, 0], minlength=kg.n_entities) + np.bincount(t[:, 2], minlength=kg.n_entities)


def _remap_pairs(pairs: np.ndarray, old1: Kg, old2: Kg, new1: Kg, new2: Kg) -> np.ndarray:
    out = []
    for a, b in np.asarray(pairs).tolist():
        ia = new1.entity_index.get(old1.entities[a])
        ib = new2.entity_index.get(old2.entities[b])
        if ia is not None and ib is not None:
            out.append((ia, ib))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def write_stats(stats: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
