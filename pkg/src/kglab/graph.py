"""Loading, validation, and indexing of text-rich knowledge graphs.

A graph is read from three kinds of UTF-8 TSV files:

* triples: one ``head_raw_id<TAB>relation_raw_id<TAB>tail_raw_id`` per line,
* entity text: ``raw_id<TAB>name[<TAB>description]``,
* relation text: same layout as entity text.

Raw string ids are mapped to dense integers in text-file appearance order so
that embedding-table row indices stay stable across split changes.
KnowledgeGraph and FilterIndex are immutable after construction and safe to
share across concurrent readers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, UnknownIdError

_WS_RUN = re.compile(r"\s+")


def collapse_whitespace(text: str) -> str:
    """Replace every whitespace run (tabs included) with a single space."""
    return _WS_RUN.sub(" ", text).strip()


def relation_display_name(name: str) -> str:
    """Turn raw relation ids like ``/film/actor`` or ``starred_in`` into words.

    Underscores and slashes become spaces and whitespace runs are collapsed;
    Freebase-style ids are not natural language and would otherwise leak into
    serialized text.
    """
    return collapse_whitespace(name.replace("_", " ").replace("/", " "))


@dataclass(frozen=True)
class Entity:
    id: int
    surface_name: str
    description: str = ""


@dataclass(frozen=True)
class Relation:
    id: int
    surface_name: str
    description: str = ""

    @property
    def display_name(self) -> str:
        return relation_display_name(self.surface_name)


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class AdjacencyEntry:
    """One train edge seen from one endpoint.

    ``direction`` is "out" when the entity is the head, "in" when the tail.
    """

    relation: int
    neighbor: int
    direction: str


@dataclass
class KnowledgeGraph:
    entities: list[Entity]
    relations: list[Relation]
    splits: dict[str, list[Triple]]
    raw_entity_ids: list[str] = field(default_factory=list)
    raw_relation_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        # adjacency from the train split only; valid/test edges in neighbor
        # context would contaminate evaluation
        adjacency: list[list[AdjacencyEntry]] = [[] for _ in self.entities]
        for t in self.splits.get("train", []):
            adjacency[t.head].append(AdjacencyEntry(t.relation, t.tail, "out"))
            adjacency[t.tail].append(AdjacencyEntry(t.relation, t.head, "in"))
        self.adjacency = adjacency
        self.entity_index = {raw: i for i, raw in enumerate(self.raw_entity_ids)}
        self.relation_index = {raw: i for i, raw in enumerate(self.raw_relation_ids)}

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity(self, entity_id: int) -> Entity:
        if not 0 <= entity_id < len(self.entities):
            raise UnknownIdError(f"unknown entity id {entity_id}")
        return self.entities[entity_id]

    def relation(self, relation_id: int) -> Relation:
        if not 0 <= relation_id < len(self.relations):
            raise UnknownIdError(f"unknown relation id {relation_id}")
        return self.relations[relation_id]

    def report(self) -> dict:
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "train": len(self.splits.get("train", [])),
            "valid": len(self.splits.get("valid", [])),
            "test": len(self.splits.get("test", [])),
        }


class FilterIndex:
    """Known-true lookups for the standard filtered-ranking protocol.

    Built from the union of all three splits: ``tails_of(h, r)`` is every
    entity known to complete (h, r, ?), ``heads_of(t, r)`` every entity known
    to complete (?, r, t).
    """

    def __init__(self, kg: KnowledgeGraph):
        tails: dict[tuple[int, int], set[int]] = {}
        heads: dict[tuple[int, int], set[int]] = {}
        for split in kg.splits.values():
            for t in split:
                tails.setdefault((t.head, t.relation), set()).add(t.tail)
                heads.setdefault((t.tail, t.relation), set()).add(t.head)
        self._tails = tails
        self._heads = heads

    def tails_of(self, head: int, relation: int) -> frozenset[int]:
        return frozenset(self._tails.get((head, relation), ()))

    def heads_of(self, tail: int, relation: int) -> frozenset[int]:
        return frozenset(self._heads.get((tail, relation), ()))

    def true_answers(self, known: int, relation: int, direction: str) -> frozenset[int]:
        """Known-true completions for a query, by prediction direction."""
        if direction in ("tail", "predict_tail"):
            return self.tails_of(known, relation)
        if direction in ("head", "predict_head"):
            return self.heads_of(known, relation)
        raise ValueError(
            f"direction must be predict_tail or predict_head, got {direction!r}")


def build_filter_sets(kg: KnowledgeGraph) -> FilterIndex:
    return FilterIndex(kg)


def _read_tsv(path, expected_columns):
    """Yield (line_number, columns) tuples, enforcing the column count."""
    try:
        handle = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataFormatError("file not found", path=path) from None
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            cols = line.split("\t")
            if len(cols) not in expected_columns:
                raise DataFormatError(
                    f"expected {' or '.join(map(str, sorted(expected_columns)))} "
                    f"tab-separated columns, got {len(cols)}",
                    path=path,
                    line=lineno,
                )
            yield lineno, cols


def _load_text_file(path, kind):
    raw_ids, names, descriptions = [], [], []
    seen = set()
    for lineno, cols in _read_tsv(path, {2, 3}):
        raw_id, name = cols[0], cols[1]
        description = cols[2] if len(cols) == 3 else ""
        if raw_id in seen:
            raise DataFormatError(f"duplicate {kind} id {raw_id!r}", path=path, line=lineno)
        if not name:
            raise DataFormatError(f"empty {kind} name for id {raw_id!r}", path=path, line=lineno)
        seen.add(raw_id)
        raw_ids.append(raw_id)
        names.append(name)
        descriptions.append(description)
    return raw_ids, names, descriptions


def load_knowledge_graph(
    triples_paths: dict[str, str],
    entity_text_path,
    relation_text_path,
) -> KnowledgeGraph:
    """Load and index a graph from TSV files.

    ``triples_paths`` maps split names (train/valid/test) to triple files.
    Triples referencing ids absent from the text files are a hard error: the
    text files are the id namespace, and silently inventing a nameless entity
    would lose the descriptions this toolkit is built around.
    """
    ent_raw, ent_names, ent_desc = _load_text_file(entity_text_path, "entity")
    rel_raw, rel_names, rel_desc = _load_text_file(relation_text_path, "relation")
    entities = [Entity(i, n, d) for i, (n, d) in enumerate(zip(ent_names, ent_desc))]
    relations = [Relation(i, n, d) for i, (n, d) in enumerate(zip(rel_names, rel_desc))]
    ent_index = {raw: i for i, raw in enumerate(ent_raw)}
    rel_index = {raw: i for i, raw in enumerate(rel_raw)}

    splits: dict[str, list[Triple]] = {}
    for split_name, path in triples_paths.items():
        triples = []
        seen = set()
        for lineno, cols in _read_tsv(path, {3}):
            h_raw, r_raw, t_raw = cols
            if h_raw not in ent_index:
                raise DataFormatError(f"unknown entity {h_raw!r}", path=path, line=lineno)
            if t_raw not in ent_index:
                raise DataFormatError(f"unknown entity {t_raw!r}", path=path, line=lineno)
            if r_raw not in rel_index:
                raise DataFormatError(f"unknown relation {r_raw!r}", path=path, line=lineno)
            triple = Triple(ent_index[h_raw], rel_index[r_raw], ent_index[t_raw])
            key = (triple.head, triple.relation, triple.tail)
            if key in seen:
                continue  # duplicates within a split collapse to one edge
            seen.add(key)
            triples.append(triple)
        splits[split_name] = triples

    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        splits=splits,
        raw_entity_ids=ent_raw,
        raw_relation_ids=rel_raw,
    )


def sample_neighbors(kg: KnowledgeGraph, entity_id: int, k: int, seed: int):
    """Uniformly sample up to ``k`` train-adjacency entries, without replacement.

    Returns (relation id, neighbor id) pairs, deduplicated, deterministic for
    a fixed seed. Fewer than ``k`` come back when the degree is smaller.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    kg.entity(entity_id)
    entries = kg.adjacency[entity_id]
    if k == 0 or not entries:
        return []
    rng = np.random.default_rng(seed)
    count = min(k, len(entries))
    chosen = rng.choice(len(entries), size=count, replace=False)
    out, seen = [], set()
    for idx in chosen:
        entry = entries[int(idx)]
        pair = (entry.relation, entry.neighbor)
        if pair in seen:
            continue
        seen.add(pair)
        out.append(pair)
    return out


def verbalize_triple(kg: KnowledgeGraph, triple: Triple) -> str:
    """Render a triple as one line of plain text: "head relation tail"."""
    head = collapse_whitespace(kg.entity(triple.head).surface_name)
    tail = collapse_whitespace(kg.entity(triple.tail).surface_name)
    rel = kg.relation(triple.relation).display_name
    return f"{head} {rel} {tail}"


def save_snapshot(kg: KnowledgeGraph, path) -> None:
    """Write a deterministic JSON snapshot of the indexed graph."""
    payload = {
        "entities": [[raw, e.surface_name, e.description]
                     for raw, e in zip(kg.raw_entity_ids, kg.entities)],
        "relations": [[raw, r.surface_name, r.description]
                      for raw, r in zip(kg.raw_relation_ids, kg.relations)],
        "splits": {
            name: [[t.head, t.relation, t.tail] for t in triples]
            for name, triples in kg.splits.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        f.write("\n")


def load_snapshot(path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    entities = [Entity(i, name, desc) for i, (_, name, desc) in enumerate(payload["entities"])]
    relations = [Relation(i, name, desc) for i, (_, name, desc) in enumerate(payload["relations"])]
    splits = {
        name: [Triple(h, r, t) for h, r, t in triples]
        for name, triples in payload["splits"].items()
    }
    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        splits=splits,
        raw_entity_ids=[raw for raw, _, _ in payload["entities"]],
        raw_relation_ids=[raw for raw, _, _ in payload["relations"]],
    )
