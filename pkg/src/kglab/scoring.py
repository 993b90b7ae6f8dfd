"""Scoring heads over provider embeddings.

Four ways to score a (head, relation, tail) query against candidates:

* joint: encode the whole triple, sigmoid of a linear readout
* two_tower: cosine between a query encoding and a candidate encoding
* masked_entity: dot products against a trainable entity table, log-softmax
  over an explicit candidate set
* generation: sum of next-token log-probabilities of the tail's name, with
  an optional trie constraint so decoding can only emit real entity names

All heads are read-only on ModelParameters; training owns mutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, UnknownIdError
from .graph import KnowledgeGraph, Triple
from .serialize import SerializeConfig, encode_joint_triple, tokenize


@dataclass
class ModelParameters:
    """Trainable state shared by the scoring heads.

    entity_table row i is entity id i's embedding. proj_query / proj_tail are
    the per-tower projections for two-tower scoring and the context projection
    for masked-entity scoring (query side). classifier_w / classifier_b feed
    the joint sigmoid head. temperature only matters to the contrastive loss.
    """

    entity_table: np.ndarray
    relation_table: np.ndarray
    proj_query: np.ndarray | None = None
    proj_tail: np.ndarray | None = None
    classifier_w: np.ndarray | None = None
    classifier_b: float = 0.0
    temperature: float = 0.05

    def __post_init__(self):
        self.entity_table = np.asarray(self.entity_table, dtype=float)
        self.relation_table = np.asarray(self.relation_table, dtype=float)
        if self.entity_table.ndim != 2:
            raise ConfigurationError("entity_table must be 2-d")
        if self.relation_table.ndim != 2:
            raise ConfigurationError("relation_table must be 2-d")
        if self.relation_table.shape[1] != self.entity_table.shape[1]:
            raise DimensionMismatchError(
                f"relation_table width {self.relation_table.shape[1]} differs "
                f"from entity_table width {self.entity_table.shape[1]}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        for name in ("proj_query", "proj_tail"):
            mat = getattr(self, name)
            if mat is not None:
                mat = np.asarray(mat, dtype=float)
                if mat.shape != (self.dim, self.dim):
                    raise DimensionMismatchError(
                        f"{name} must be {self.dim}x{self.dim}, got {mat.shape}")
                setattr(self, name, mat)
        if self.classifier_w is not None:
            self.classifier_w = np.asarray(self.classifier_w, dtype=float)
        if not np.isfinite(self.entity_table).all():
            raise ConfigurationError("entity_table has non-finite entries")
        if not np.isfinite(self.relation_table).all():
            raise ConfigurationError("relation_table has non-finite entries")

    @property
    def num_entities(self) -> int:
        return self.entity_table.shape[0]

    @property
    def dim(self) -> int:
        return self.entity_table.shape[1]

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            entity_table=self.entity_table.copy(),
            relation_table=self.relation_table.copy(),
            proj_query=None if self.proj_query is None else self.proj_query.copy(),
            proj_tail=None if self.proj_tail is None else self.proj_tail.copy(),
            classifier_w=None if self.classifier_w is None else self.classifier_w.copy(),
            classifier_b=self.classifier_b,
            temperature=self.temperature,
        )

    @classmethod
    def initialize(cls, num_entities: int, num_relations: int, dim: int,
                   seed: int = 0, scale: float = 0.1,
                   with_projections: bool = False,
                   with_classifier: bool = False) -> "ModelParameters":
        rng = np.random.default_rng(seed)
        return cls(
            entity_table=rng.normal(0.0, scale, size=(num_entities, dim)),
            relation_table=rng.normal(0.0, scale, size=(num_relations, dim)),
            proj_query=np.eye(dim) if with_projections else None,
            proj_tail=np.eye(dim) if with_projections else None,
            classifier_w=rng.normal(0.0, scale, size=dim) if with_classifier else None,
        )

    def check_entity(self, entity_id: int) -> None:
        if not 0 <= entity_id < self.num_entities:
            raise UnknownIdError(f"entity id {entity_id} is outside the table "
                                 f"(|E| = {self.num_entities})")


def sigmoid(x: float) -> float:
    # split on sign to avoid overflow in exp for large |x|
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def score_joint(params: ModelParameters, provider, kg: KnowledgeGraph,
                triple: Triple, cfg: SerializeConfig, seed: int = 0) -> float:
    """Probability the triple holds: sigmoid(w . encode(triple) + b)."""
    vec = provider.encode(encode_joint_triple(kg, triple, cfg, seed=seed))
    if params.classifier_w is None:
        w = np.zeros(vec.shape[0])
    else:
        w = params.classifier_w
    if w.shape != vec.shape:
        raise DimensionMismatchError(
            f"classifier weight has shape {w.shape}, encoding has {vec.shape}")
    return sigmoid(float(w @ vec) + params.classifier_b)


def score_two_tower(e_hr: np.ndarray, e_t: np.ndarray) -> float:
    """Cosine similarity between the query and candidate tower outputs."""
    u = np.asarray(e_hr, dtype=float)
    v = np.asarray(e_t, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatchError(
            f"tower outputs disagree: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(u @ v) / (nu * nv)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    # max-subtraction keeps exp in range for any finite logits
    z = np.asarray(logits, dtype=float)
    m = z.max()
    shifted = z - m
    return shifted - math.log(float(np.exp(shifted).sum()))


def masked_context(params: ModelParameters, context: np.ndarray) -> np.ndarray:
    ctx = np.asarray(context, dtype=float)
    if ctx.shape != (params.dim,):
        raise DimensionMismatchError(
            f"context has shape {ctx.shape}, model dimension is {params.dim}")
    if params.proj_query is not None:
        ctx = params.proj_query @ ctx
    return ctx


def score_masked_entity(params: ModelParameters, context: np.ndarray,
                        candidate_ids) -> np.ndarray:
    """Log-probability of each candidate filling the masked slot.

    Logit j is entity_table[j] . (projected) context; the softmax runs over
    the candidate set only, so the result is a proper distribution on it.
    """
    ids = list(candidate_ids)
    if not ids:
        raise ValueError("candidate set is empty")
    for j in ids:
        params.check_entity(j)
    ctx = masked_context(params, context)
    logits = params.entity_table[ids] @ ctx
    return log_softmax(logits)


def score_generation(lp, context_tokens, target_tokens) -> float:
    """Teacher-forced total log-probability of the target continuation."""
    target = list(target_tokens)
    if not target:
        raise ValueError("target token sequence is empty")
    prefix = tuple(context_tokens)
    total = 0.0
    for tok in target:
        dist = lp.next_logprobs(prefix)
        if tok not in dist:
            raise KeyError(f"token {tok!r} not in provider vocabulary")
        total += dist[tok]
        prefix = prefix + (tok,)
    return total


# --- entity trie and constrained decoding ------------------------------------

class TrieNode:
    __slots__ = ("children", "entity_id")

    def __init__(self):
        self.children: dict[str, TrieNode] = {}
        self.entity_id: int | None = None


class EntityTrie:
    """Prefix tree over tokenized entity names, leaf-marked with entity ids."""

    def __init__(self):
        self.root = TrieNode()
        self._entries: dict[int, tuple[str, ...]] = {}

    def add(self, entity_id: int, tokens) -> None:
        toks = tuple(tokens)
        if not toks:
            raise ValueError(f"entity {entity_id} has no name tokens")
        if entity_id in self._entries:
            raise ValueError(f"entity {entity_id} added twice")
        node = self.root
        for tok in toks:
            node = node.children.setdefault(tok, TrieNode())
        if node.entity_id is not None:
            raise ValueError(
                f"entities {node.entity_id} and {entity_id} share the token "
                f"sequence {' '.join(toks)!r}; names must be distinct")
        node.entity_id = entity_id
        self._entries[entity_id] = toks

    def __len__(self) -> int:
        return len(self._entries)

    def tokens_of(self, entity_id: int) -> tuple[str, ...]:
        return self._entries[entity_id]

    def entity_ids(self):
        return sorted(self._entries)

    def to_lines(self) -> list[str]:
        return [f"{entity_id}\t{' '.join(self._entries[entity_id])}"
                for entity_id in sorted(self._entries)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for line in self.to_lines():
                f.write(line + "\n")

    @classmethod
    def from_lines(cls, lines) -> "EntityTrie":
        trie = cls()
        for raw in lines:
            line = raw.rstrip("\n")
            if not line:
                continue
            ident, _, body = line.partition("\t")
            trie.add(int(ident), body.split())
        return trie

    @classmethod
    def load(cls, path) -> "EntityTrie":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_lines(f)


def build_entity_trie(kg: KnowledgeGraph, cfg: SerializeConfig | None = None) -> EntityTrie:
    cfg = cfg if cfg is not None else SerializeConfig()
    trie = EntityTrie()
    for i in range(kg.num_entities):
        trie.add(i, tokenize(kg.entities[i].surface_name, cfg))
    return trie


def decode_constrained(lp, context_tokens, trie: EntityTrie,
                       beam: int) -> list[tuple[int, float]]:
    """Beam search that can only spell entity names present in the trie.

    Token log-probabilities come straight from the provider; nothing is
    renormalized over the allowed subset, so scores stay comparable with
    plain score_generation. With beam >= len(trie) no live path is ever
    pruned (live paths are distinct trie prefixes, and there are at most
    len(trie) of those at any depth), making the search exhaustive.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    if len(trie) == 0:
        raise ValueError("entity trie is empty")
    context = tuple(context_tokens)
    # (node, emitted tokens, total logprob)
    live: list[tuple[TrieNode, tuple[str, ...], float]] = [(trie.root, (), 0.0)]
    completed: list[tuple[int, float]] = []
    while live:
        extended: list[tuple[TrieNode, tuple[str, ...], float]] = []
        for node, emitted, score in live:
            if not node.children:
                continue
            dist = lp.next_logprobs(context + emitted)
            for tok, child in node.children.items():
                if tok not in dist:
                    continue
                nscore = score + dist[tok]
                if child.entity_id is not None:
                    completed.append((child.entity_id, nscore))
                if child.children:
                    extended.append((child, emitted + (tok,), nscore))
        # prune to the beam; emitted-token tiebreak keeps runs reproducible
        extended.sort(key=lambda item: (-item[2], item[1]))
        live = extended[:beam]
    completed.sort(key=lambda item: (-item[1], item[0]))
    return completed[:beam]
