"""Triple storage, reverse relations and the joint graph of two KGs.

Entities and relations are mapped to dense integer ids in order of first
appearance. Graph structure is kept as CSR arrays (``indptr``, ``rel``,
``dst``) so the walk kernels can consume it without copies.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

REVERSE_MARK = "⁻"


class KgError(ValueError):
    """Raised for malformed graph or alignment input."""


class TripleParseError(KgError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


def _csr(n_nodes: int, src: np.ndarray, *cols: np.ndarray):
    """Group edge columns by source node, keeping input order within a node."""
    order = np.argsort(src, kind="stable")
    counts = np.bincount(src, minlength=n_nodes)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return (indptr,) + tuple(np.ascontiguousarray(c[order]) for c in cols)


@dataclass
class Kg:
    entities: list[str]
    relations: list[str]
    triples: np.ndarray  # (k, 3) int64: subject, relation, object
    entity_index: dict[str, int] = field(default=None, repr=False)
    relation_index: dict[str, int] = field(default=None, repr=False)

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if self.entity_index is None:
            self.entity_index = {e: i for i, e in enumerate(self.entities)}
        if self.relation_index is None:
            self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self._csr = None
        t = self.triples
        if len(t) and (
            t[:, [0, 2]].min() < 0
            or t[:, [0, 2]].max() >= len(self.entities)
            or t[:, 1].min() < 0
            or t[:, 1].max() >= len(self.relations)
        ):
            raise KgError("triple id out of vocabulary bounds")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    def csr(self):
        """Outgoing edges as ``(indptr, rel, dst)``."""
        if self._csr is None:
            t = self.triples
            self._csr = _csr(self.n_entities, t[:, 0], t[:, 1], t[:, 2])
        return self._csr

    @property
    def adjacency(self) -> list[list[tuple[int, int]]]:
        indptr, rel, dst = self.csr()
        return [
            list(zip(rel[indptr[i]:indptr[i + 1]].tolist(), dst[indptr[i]:indptr[i + 1]].tolist()))
            for i in range(self.n_entities)
        ]

    def degrees(self) -> np.ndarray:
        """Undirected degree (in + out) of every entity."""
        t = self.triples
        return np.bincount(t[:, 0], minlength=self.n_entities) + np.bincount(
            t[:, 2], minlength=self.n_entities
        )

    @classmethod
    def from_labeled(cls, triples: Iterable[Sequence[str]]) -> "Kg":
        ents: dict[str, int] = {}
        rels: dict[str, int] = {}
        ids = []
        for s, r, o in triples:
            si = ents.setdefault(s, len(ents))
            ri = rels.setdefault(r, len(rels))
            oi = ents.setdefault(o, len(ents))
            ids.append((si, ri, oi))
        return cls(list(ents), list(rels), np.array(ids, dtype=np.int64).reshape(-1, 3), ents, rels)

    def labeled_triples(self) -> list[tuple[str, str, str]]:
        E, R = self.entities, self.relations
        return [(E[s], R[r], E[o]) for s, r, o in self.triples.tolist()]

    def subgraph(self, keep: np.ndarray | Sequence[int]) -> "Kg":
        """Induced subgraph on ``keep`` (entity ids). Relation vocabulary is
        trimmed to relations that still occur; ids are reassigned densely
        preserving the original order."""
        mask = np.zeros(self.n_entities, dtype=bool)
        mask[np.asarray(keep, dtype=np.int64)] = True
        t = self.triples
        t = t[mask[t[:, 0]] & mask[t[:, 2]]]
        ent_ids = np.flatnonzero(mask)
        emap = np.full(self.n_entities, -1, dtype=np.int64)
        emap[ent_ids] = np.arange(len(ent_ids))
        used_r = np.zeros(self.n_relations, dtype=bool)
        used_r[t[:, 1]] = True
        rel_ids = np.flatnonzero(used_r)
        rmap = np.full(self.n_relations, -1, dtype=np.int64)
        rmap[rel_ids] = np.arange(len(rel_ids))
        new = np.stack([emap[t[:, 0]], rmap[t[:, 1]], emap[t[:, 2]]], axis=1) if len(t) else t
        return Kg(
            [self.entities[i] for i in ent_ids],
            [self.relations[i] for i in rel_ids],
            new,
        )


@dataclass
class ReverseAugmentedKg(Kg):
    """A Kg whose relation ids ``r + base_relations`` are the reverses of ``r``."""

    base_relations: int = 0

    def reverse_id(self, r: int) -> int:
        n = self.base_relations
        return r + n if r < n else r - n


def add_reverse_relations(kg: Kg) -> ReverseAugmentedKg:
    n = kg.n_relations
    t = kg.triples
    rev = np.stack([t[:, 2], t[:, 1] + n, t[:, 0]], axis=1)
    return ReverseAugmentedKg(
        entities=list(kg.entities),
        relations=list(kg.relations) + [r + REVERSE_MARK for r in kg.relations],
        triples=np.concatenate([t, rev]),
        base_relations=n,
    )


@dataclass
class PriorAlignment:
    pairs: np.ndarray  # (n, 2) int64: KG1 entity id, KG2 entity id

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        for col, side in ((0, "KG1"), (1, "KG2")):
            if len(np.unique(self.pairs[:, col])) != len(self.pairs):
                raise KgError(f"alignment is not injective on the {side} side")

    def __len__(self):
        return len(self.pairs)

    def validate(self, kg1: Kg, kg2: Kg) -> None:
        p = self.pairs
        if len(p) and (
            p.min() < 0 or p[:, 0].max() >= kg1.n_entities or p[:, 1].max() >= kg2.n_entities
        ):
            bad = p[(p[:, 0] >= kg1.n_entities) | (p[:, 1] >= kg2.n_entities) | (p.min(axis=1) < 0)][0]
            raise KgError(f"alignment pair {tuple(bad.tolist())} references an unknown entity")


@dataclass
class JointGraph:
    """Union of two reverse-augmented KGs, linked by copying the edges of
    aligned entities onto each other.

    Entity ids: KG1 entities ``[0, n1)`` then KG2 entities ``[n1, n1 + n2)``.
    Relation ids: KG1 relations (with reverses) then KG2 relations (with
    reverses). A single KG can be wrapped with ``kg2=None``.
    """

    kg1: ReverseAugmentedKg
    kg2: ReverseAugmentedKg | None
    prior: PriorAlignment
    indptr: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    copied: np.ndarray  # bool per edge: edge was copied from an aligned counterpart
    membership: np.ndarray  # int8 per entity: 1 or 2

    @property
    def n_entities(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_relations(self) -> int:
        return self.kg1.n_relations + (self.kg2.n_relations if self.kg2 is not None else 0)

    @property
    def entity_offset2(self) -> int:
        return self.kg1.n_entities

    @property
    def relation_offset2(self) -> int:
        return self.kg1.n_relations

    @property
    def n_edges(self) -> int:
        return len(self.dst)

    def out_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges_of(self, v: int) -> list[tuple[int, int]]:
        a, b = self.indptr[v], self.indptr[v + 1]
        return list(zip(self.rel[a:b].tolist(), self.dst[a:b].tolist()))

    def entity_label(self, e: int) -> str:
        if e < self.kg1.n_entities:
            return self.kg1.entities[e]
        return self.kg2.entities[e - self.kg1.n_entities]

    def relation_label(self, r: int) -> str:
        if r < self.kg1.n_relations:
            return self.kg1.relations[r]
        return self.kg2.relations[r - self.kg1.n_relations]

    def undirected_neighbors(self):
        """CSR ``(indptr, nbrs)`` of sorted unique neighbours in either direction."""
        if getattr(self, "_nbrs", None) is None:
            src = np.repeat(np.arange(self.n_entities, dtype=np.int64), np.diff(self.indptr))
            a = np.concatenate([src, self.dst])
            b = np.concatenate([self.dst, src])
            pairs = np.unique(a * self.n_entities + b)
            a, b = pairs // self.n_entities, pairs % self.n_entities
            self._nbrs = _csr(self.n_entities, a, b)
        return self._nbrs

    def triples(self, include_copied: bool = True) -> np.ndarray:
        src = np.repeat(np.arange(self.n_entities, dtype=np.int64), np.diff(self.indptr))
        t = np.stack([src, self.rel, self.dst], axis=1)
        return t if include_copied else t[~self.copied]


def build_joint_graph(
    kg1: ReverseAugmentedKg,
    kg2: ReverseAugmentedKg | None = None,
    prior: PriorAlignment | None = None,
) -> JointGraph:
    prior = prior if prior is not None else PriorAlignment(np.zeros((0, 2), dtype=np.int64))
    if kg2 is None:
        if len(prior):
            raise KgError("prior alignment given without a second KG")
        t = kg1.triples
        src, rel, dst = t[:, 0], t[:, 1], t[:, 2]
        copied = np.zeros(len(t), dtype=bool)
        membership = np.ones(kg1.n_entities, dtype=np.int8)
        indptr, rel, dst, copied = _csr(kg1.n_entities, src, rel, dst, copied)
        return JointGraph(kg1, None, prior, indptr, rel, dst, copied, membership)

    prior.validate(kg1, kg2)
    n1, r1 = kg1.n_entities, kg1.n_relations
    n = n1 + kg2.n_entities
    t1 = kg1.triples
    t2 = kg2.triples + np.array([n1, r1, n1])
    own = np.concatenate([t1, t2])

    # Every own edge is replicated onto each combination of counterparts of
    # its endpoints: aligned entities share outgoing edges and, through the
    # reverse relations, incoming ones too. The result stays reverse-closed.
    counterpart = np.full(n, -1, dtype=np.int64)
    counterpart[prior.pairs[:, 0]] = prior.pairs[:, 1] + n1
    counterpart[prior.pairs[:, 1] + n1] = prior.pairs[:, 0]
    cs, co = counterpart[own[:, 0]], counterpart[own[:, 2]]
    parts = []
    for src_ok, dst_ok, new_s, new_o in (
        (cs >= 0, None, True, False),
        (None, co >= 0, False, True),
        (cs >= 0, co >= 0, True, True),
    ):
        sel = np.ones(len(own), dtype=bool)
        if src_ok is not None:
            sel &= src_ok
        if dst_ok is not None:
            sel &= dst_ok
        c = own[sel].copy()
        if new_s:
            c[:, 0] = cs[sel]
        if new_o:
            c[:, 2] = co[sel]
        parts.append(c)
    copies = np.concatenate(parts)

    allt = np.concatenate([own, copies])
    copied = np.zeros(len(allt), dtype=bool)
    copied[len(own):] = True
    membership = np.concatenate(
        [np.ones(n1, dtype=np.int8), np.full(kg2.n_entities, 2, dtype=np.int8)]
    )
    indptr, rel, dst, copied = _csr(n, allt[:, 0], allt[:, 1], allt[:, 2], copied)
    return JointGraph(kg1, kg2, prior, indptr, rel, dst, copied, membership)


# ---------------------------------------------------------------- file formats


def _read_tsv(path, n_fields: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != n_fields or any(p == "" for p in parts):
                raise TripleParseError(
                    path, lineno, f"expected {n_fields} tab-separated fields, got {len(parts)}"
                )
            yield parts


def load_triples(path: str | os.PathLike) -> Kg:
    """Read a UTF-8 tab-separated triple file into a Kg."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    kg = Kg.from_labeled(_read_tsv(path, 3))
    if kg.n_triples == 0:
        raise KgError(f"{path}: no triples")
    return kg


def write_triples(kg: Kg, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, r, o in kg.labeled_triples():
            fh.write(f"{s}\t{r}\t{o}\n")


def load_alignment(path: str | os.PathLike, kg1: Kg, kg2: Kg) -> PriorAlignment:
    pairs = []
    for lineno, (a, b) in enumerate(_read_tsv(path, 2), 1):
        try:
            pairs.append((kg1.entity_index[a], kg2.entity_index[b]))
        except KeyError as exc:
            raise KgError(f"{path}: alignment references unknown entity {exc.args[0]!r}") from None
    return PriorAlignment(np.array(pairs, dtype=np.int64).reshape(-1, 2))


def write_alignment(pairs: np.ndarray, kg1: Kg, kg2: Kg, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in np.asarray(pairs).reshape(-1, 2).tolist():
            fh.write(f"{kg1.entities[a]}\t{kg2.entities[b]}\n")


def save_graph(kg: Kg, path: str | os.PathLike) -> None:
    """Serialized layout (UTF-8, ``\\n`` line ends)::

        entities=<n> relations=<m> triples=<k>
        <n lines: entity label for id 0..n-1>
        <m lines: relation label for id 0..m-1>
        <k lines: subject-id TAB relation-id TAB object-id>
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"entities={kg.n_entities} relations={kg.n_relations} triples={kg.n_triples}\n")
        for e in kg.entities:
            fh.write(e + "\n")
        for r in kg.relations:
            fh.write(r + "\n")
        for s, r, o in kg.triples.tolist():
            fh.write(f"{s}\t{r}\t{o}\n")


def load_graph(path: str | os.PathLike) -> Kg:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    try:
        header = dict(kv.split("=") for kv in lines[0].split())
        n, m, k = int(header["entities"]), int(header["relations"]), int(header["triples"])
    except (KeyError, ValueError):
        raise KgError(f"{path}: bad header {lines[0]!r}") from None
    ents = lines[1:1 + n]
    rels = lines[1 + n:1 + n + m]
    body = lines[1 + n + m:1 + n + m + k]
    if len(body) != k:
        raise KgError(f"{path}: expected {k} triples, found {len(body)}")
    triples = np.array([list(map(int, ln.split("\t"))) for ln in body], dtype=np.int64).reshape(-1, 3)
    return Kg(ents, rels, triples)
