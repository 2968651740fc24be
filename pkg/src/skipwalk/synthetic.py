"""Synthetic graphs for tests, benchmarks and desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .kg import Kg


def random_kg(n_entities: int, n_relations: int, avg_degree: float, rng: np.random.Generator,
              prefix: str = "e", rel_prefix: str = "r") -> Kg:
    """Random multi-relational graph with no isolated entity and no duplicate
    triple. ``avg_degree`` counts in + out edges, so it has
    ``round(n_entities * avg_degree / 2)`` triples."""
    n_triples = int(round(n_entities * avg_degree / 2))
    if n_triples < (n_entities + 1) // 2:
        raise ValueError("avg_degree too small to cover every entity")
    seen: set[tuple[int, int, int]] = set()
    triples = []

    def add(s, r, o):
        if s != o and (s, r, o) not in seen:
            seen.add((s, r, o))
            triples.append((s, r, o))
            return True
        return False

    # cover every entity once, then fill uniformly
    perm = rng.permutation(n_entities)
    for i in range(0, n_entities - 1, 2):
        add(int(perm[i]), int(rng.integers(n_relations)), int(perm[i + 1]))
    if n_entities % 2:
        add(int(perm[-1]), int(rng.integers(n_relations)), int(perm[0]))
    while len(triples) < n_triples:
        s, o = rng.integers(n_entities, size=2)
        add(int(s), int(rng.integers(n_relations)), int(o))
    ents = [f"{prefix}{i}" for i in range(n_entities)]
    rels = [f"{rel_prefix}{i}" for i in range(n_relations)]
    labeled = [(ents[s], rels[r], ents[o]) for s, r, o in triples]
    return Kg.from_labeled(labeled)


def isomorphic_pair(n_entities: int = 300, n_relations: int = 15, avg_degree: float = 6.0,
                    seed: int = 0) -> tuple[Kg, Kg, list[tuple[str, str]]]:
    """Two KGs with the same structure under a hidden entity permutation and
    disjoint labels. Returns ``(kg1, kg2, alignment)`` with labelled pairs."""
    rng = np.random.default_rng(seed)
    kg1 = random_kg(n_entities, n_relations, avg_degree, rng, prefix="a", rel_prefix="p")
    perm = rng.permutation(n_entities)
    name2 = {e: f"b{perm[i]}" for i, e in enumerate(kg1.entities)}
    rel2 = {r: f"q{i}" for i, r in enumerate(kg1.relations)}
    labeled = [(name2[s], rel2[r], name2[o]) for s, r, o in kg1.labeled_triples()]
    order = rng.permutation(len(labeled))
    kg2 = Kg.from_labeled([labeled[i] for i in order])
    return kg1, kg2, [(e, name2[e]) for e in kg1.entities]


def power_law_kg(n_entities: int, n_relations: int, avg_degree: float, rng: np.random.Generator,
                 exponent: float = 2.3, prefix: str = "n", community_size: int | None = 50,
                 inter_fraction: float = 0.01) -> Kg:
    """Chung-Lu style KG with heavy-tailed expected degrees. Entities are
    spread over communities of about ``community_size``; all but
    ``inter_fraction`` of the triples stay inside a community, which gives
    the locality real KGs have (``community_size=None`` turns it off).
    Every entity has at least one triple; duplicates and self-loops are
    dropped."""
    n = n_entities
    w = np.arange(1, n + 1) ** (-1.0 / (exponent - 1.0))
    w = w[rng.permutation(n)]
    n_triples = int(round(n * avg_degree / 2))
    extra = max(n_triples - n, 0)
    # one triple per entity keeps everyone attached
    s = np.concatenate([np.arange(n), _weighted(w, extra, rng)])
    if community_size is None or community_size >= n:
        o = _weighted(w, len(s), rng)
    else:
        n_comm = max(n // community_size, 1)
        comm = rng.integers(n_comm, size=n)
        order = np.argsort(comm, kind="stable")
        cw = np.cumsum(w[order])
        lo = np.searchsorted(comm[order], np.arange(n_comm))
        hi = np.searchsorted(comm[order], np.arange(n_comm), side="right")
        c = comm[s]
        base = np.where(lo[c] > 0, cw[np.maximum(lo[c] - 1, 0)], 0.0)
        x = base + rng.random(len(s)) * (cw[hi[c] - 1] - base)
        j = np.clip(np.searchsorted(cw, x, side="right"), lo[c], hi[c] - 1)
        o = order[j]
        glob = rng.random(len(s)) < inter_fraction
        o[glob] = _weighted(w, int(glob.sum()), rng)
    r = rng.integers(n_relations, size=len(s))
    # self-loops: redirect to a uniform other entity
    loop = s == o
    o[loop] = (s[loop] + 1 + rng.integers(n - 1, size=int(loop.sum()))) % n
    t = np.unique(np.stack([s, r, o], axis=1), axis=0)
    t = t[rng.permutation(len(t))]
    ents = [f"{prefix}{i}" for i in range(n)]
    return Kg(ents, [f"r{i}" for i in range(n_relations)], t)


def _weighted(w: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    cw = np.cumsum(w)
    return np.minimum(np.searchsorted(cw, rng.random(size) * cw[-1], side="right"), len(w) - 1)


def coupled_power_law(n_entities: int, n_relations: int, avg_degree: float, seed: int = 0):
    """Power-law KG plus an isomorphic relabelled copy; for SRP tests."""
    rng = np.random.default_rng(seed)
    kg1 = power_law_kg(n_entities, n_relations, avg_degree, rng, prefix="a")
    kg2 = Kg([f"b{i}" for i in range(n_entities)], [f"q{i}" for i in range(n_relations)], kg1.triples.copy())
    return kg1, kg2, np.stack([np.arange(n_entities), np.arange(n_entities)], axis=1)
