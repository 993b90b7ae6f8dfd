"""Downstream adapters over a trained masked-entity model.

All four tasks reduce to the same move: build a token sequence with one MASK,
encode it with the frozen provider, and rank a candidate table against the
context vector. What changes is where the sequence comes from (a KG query, a
natural-language question, an interaction history, a cloze sentence) and
which table is ranked (entities, items, vocabulary tokens).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, UnknownIdError
from .graph import FilterIndex, KnowledgeGraph
from .scoring import ModelParameters, score_masked_entity
from .serialize import (CLS, MASK, SEP, SerializeConfig, TokenSequence,
                        encode_interaction_prefix, encode_masked_query,
                        tokenize)


@dataclass(frozen=True)
class InteractionHistory:
    user_id: str
    items: tuple[int, ...]  # oldest first


@dataclass(frozen=True)
class ClozeQuery:
    """A token sequence with exactly one MASK and an optional entity mention.

    The mention span (start, end) indexes the token list; only the mention's
    entity id feeds the augmented scoring, the span is kept for provenance.
    """

    tokens: tuple
    mention_entity: int | None = None
    mention_span: tuple[int, int] | None = None

    def __post_init__(self):
        n_masks = sum(1 for t in self.tokens if t == MASK)
        if n_masks != 1:
            raise ValueError(f"cloze query needs exactly one MASK, found {n_masks}")
        if (self.mention_entity is None) != (self.mention_span is None):
            raise ValueError("mention entity and span must come together")
        if self.mention_span is not None:
            s, e = self.mention_span
            if not (0 <= s < e <= len(self.tokens)):
                raise ValueError(f"mention span {self.mention_span} out of range")


def _ranked(params: ModelParameters, ctx_raw, candidate_ids, top_n: int):
    """Top-n (candidate, log-prob) by score, ascending-id tie-break."""
    cands = list(candidate_ids)
    logps = score_masked_entity(params, ctx_raw, cands)
    order = sorted(range(len(cands)), key=lambda i: (-logps[i], cands[i]))
    return [(cands[i], float(logps[i])) for i in order[:top_n]]


def kgc_predict(params: ModelParameters, provider, kg: KnowledgeGraph,
                head_id: int, relation_id: int, direction: str, top_n: int,
                scfg: SerializeConfig | None = None,
                filter_index: FilterIndex | None = None,
                gold: int | None = None, seed: int = 0):
    """Rank entities as the missing endpoint of a (head, relation) query.

    With a filter index, every already-known answer is dropped from the
    candidates except `gold`, which is retained so evaluation can still rank
    it. Head-direction queries serialize with the REVERSE marker.
    """
    scfg = scfg if scfg is not None else SerializeConfig()
    kg.entity(head_id)
    kg.relation(relation_id)
    seq = encode_masked_query(kg, head_id, relation_id, direction, scfg, seed=seed)
    ctx = provider.encode(seq)
    if filter_index is not None:
        true = filter_index.true_answers(head_id, relation_id, direction)
        candidates = [i for i in range(kg.num_entities)
                      if i == gold or i not in true]
    else:
        candidates = list(range(kg.num_entities))
    return _ranked(params, ctx, candidates, top_n)


def qa_answer(params: ModelParameters, provider, kg: KnowledgeGraph,
              question: str, top_n: int,
              scfg: SerializeConfig | None = None):
    """Answer a 1-hop question by masked-entity ranking over all entities.

    The question is serialized as [CLS] its tokens [SEP] [MASK] [SEP]; long
    questions keep their leading tokens.
    """
    scfg = scfg if scfg is not None else SerializeConfig()
    toks = tokenize(question, scfg)
    if not toks:
        raise ValueError("question is empty")
    budget = scfg.max_len - 4  # CLS, SEP, MASK, SEP
    toks = toks[:budget]
    seq = TokenSequence([CLS] + toks + [SEP, MASK, SEP], scfg.max_len)
    ctx = provider.encode(seq)
    return _ranked(params, ctx, range(kg.num_entities), top_n)


def recommend_next(params: ModelParameters, provider,
                   history: InteractionHistory, top_n: int,
                   scfg: SerializeConfig | None = None):
    """Rank the next item for a user, never re-recommending history items."""
    scfg = scfg if scfg is not None else SerializeConfig()
    if not history.items:
        raise ValueError("interaction history is empty")
    seq = encode_interaction_prefix(history.items, scfg)
    ctx = provider.encode(seq)
    seen = set(history.items)
    candidates = [i for i in range(params.num_entities) if i not in seen]
    if not candidates:
        return []
    return _ranked(params, ctx, candidates, top_n)


@dataclass
class ProbeResult:
    base: list
    augmented: list | None


def _cloze_sequence(query: ClozeQuery, scfg: SerializeConfig) -> TokenSequence:
    body = list(query.tokens)[:scfg.max_len - 2]
    if MASK not in body:
        raise ValueError("cloze truncation dropped the MASK; shorten the query")
    return TokenSequence([CLS] + body + [SEP], scfg.max_len)


def probe_fact(entity_params: ModelParameters, token_table: np.ndarray,
               vocabulary, provider, query: ClozeQuery, top_n: int,
               lam: float = 1.0,
               scfg: SerializeConfig | None = None) -> ProbeResult:
    """Fill-the-blank probing with optional entity-knowledge injection.

    The base ranking scores vocabulary tokens against the encoded cloze. When
    the query carries an entity mention, a second ranking uses the context
    L2-normalized after adding lam times the mention entity's embedding row,
    so stored relational knowledge can rescue a purely textual miss.
    """
    scfg = scfg if scfg is not None else SerializeConfig()
    vocab = list(vocabulary)
    table = np.asarray(token_table, dtype=float)
    if table.shape[0] != len(vocab):
        raise DataFormatError(
            f"token table has {table.shape[0]} rows for {len(vocab)} tokens")
    ctx = provider.encode(_cloze_sequence(query, scfg))

    def ranking(vec):
        scores = table @ vec
        order = sorted(range(len(vocab)), key=lambda i: (-scores[i], i))
        return [(vocab[i], float(scores[i])) for i in order[:top_n]]

    base = ranking(ctx)
    augmented = None
    if query.mention_entity is not None:
        entity_params.check_entity(query.mention_entity)
        fused = ctx + lam * entity_params.entity_table[query.mention_entity]
        norm = float(np.linalg.norm(fused))
        if norm > 0:
            fused = fused / norm
        augmented = ranking(fused)
    return ProbeResult(base=base, augmented=augmented)


def probe_rank(table: np.ndarray, vocabulary, vec, gold_token: str) -> int:
    """Pessimistic rank of the gold token under scores table . vec."""
    vocab = list(vocabulary)
    if gold_token not in vocab:
        raise UnknownIdError(f"gold token {gold_token!r} not in vocabulary")
    scores = np.asarray(table, dtype=float) @ np.asarray(vec, dtype=float)
    gold_idx = vocab.index(gold_token)
    g = scores[gold_idx]
    return 1 + int(np.sum(scores > g)) + int(np.sum(scores == g)) - 1


def probe_eval(entity_params: ModelParameters, token_table: np.ndarray,
               vocabulary, provider, probe_set, lam: float = 1.0,
               scfg: SerializeConfig | None = None) -> dict:
    """hits@1 and MRR over a probe set, with and without entity fusion.

    Queries without a mention contribute their base ranking to both columns.
    """
    scfg = scfg if scfg is not None else SerializeConfig()
    items = list(probe_set)
    if not items:
        raise ValueError("probe set is empty")
    table = np.asarray(token_table, dtype=float)
    ranks = {"base": [], "augmented": []}
    for query, gold_token in items:
        ctx = provider.encode(_cloze_sequence(query, scfg))
        ranks["base"].append(probe_rank(table, vocabulary, ctx, gold_token))
        if query.mention_entity is not None:
            fused = ctx + lam * entity_params.entity_table[query.mention_entity]
            norm = float(np.linalg.norm(fused))
            if norm > 0:
                fused = fused / norm
            ranks["augmented"].append(
                probe_rank(table, vocabulary, fused, gold_token))
        else:
            ranks["augmented"].append(ranks["base"][-1])
    out = {}
    for key, rs in ranks.items():
        out[key] = {"hits1": sum(1 for r in rs if r == 1) / len(rs),
                    "mrr": sum(1.0 / r for r in rs) / len(rs)}
    return out


# --- task input files --------------------------------------------------------

def load_qa_pairs(path, kg: KnowledgeGraph):
    """TSV rows "question<TAB>gold_entity_raw_id"."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError("expected question<TAB>gold_raw_id",
                                      path=path, line=lineno)
            question, raw_id = parts
            if raw_id not in kg.entity_index:
                raise DataFormatError(f"unknown entity raw id {raw_id!r}",
                                      path=path, line=lineno)
            pairs.append((question, kg.entity_index[raw_id]))
    return pairs


def load_interactions(path, kg: KnowledgeGraph):
    """TSV rows "user_id<TAB>item1,item2,...,itemN", chronological raw ids."""
    histories = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError("expected user_id<TAB>item,item,...",
                                      path=path, line=lineno)
            user, items_text = parts
            items = []
            for raw_id in items_text.split(","):
                raw_id = raw_id.strip()
                if raw_id not in kg.entity_index:
                    raise DataFormatError(f"unknown item raw id {raw_id!r}",
                                          path=path, line=lineno)
                items.append(kg.entity_index[raw_id])
            if not items:
                raise DataFormatError("empty item list", path=path, line=lineno)
            histories.append(InteractionHistory(user_id=user, items=tuple(items)))
    return histories


def parse_cloze(text: str, scfg: SerializeConfig | None = None,
                mention_entity: int | None = None,
                mention_span: tuple[int, int] | None = None) -> ClozeQuery:
    """Turn "X was born in [MASK] ." into a ClozeQuery.

    The literal chunk [MASK] becomes the special token; everything else runs
    through the normal tokenizer.
    """
    scfg = scfg if scfg is not None else SerializeConfig()
    tokens: list = []
    for chunk in text.split():
        if chunk == "[MASK]":
            tokens.append(MASK)
        else:
            tokens.extend(tokenize(chunk, scfg))
    return ClozeQuery(tokens=tuple(tokens), mention_entity=mention_entity,
                      mention_span=mention_span)


def load_probe_set(path, kg: KnowledgeGraph,
                   scfg: SerializeConfig | None = None):
    """TSV rows "cloze_with_[MASK]<TAB>gold_token[<TAB>mention_raw_id:start:end]"."""
    scfg = scfg if scfg is not None else SerializeConfig()
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise DataFormatError(
                    "expected cloze<TAB>gold_token[<TAB>mention]",
                    path=path, line=lineno)
            mention_entity = mention_span = None
            if len(parts) == 3:
                try:
                    raw_id, start, end = parts[2].rsplit(":", 2)
                    mention_span = (int(start), int(end))
                except ValueError:
                    raise DataFormatError(
                        f"bad mention spec {parts[2]!r}, want raw_id:start:end",
                        path=path, line=lineno) from None
                if raw_id not in kg.entity_index:
                    raise DataFormatError(f"unknown entity raw id {raw_id!r}",
                                          path=path, line=lineno)
                mention_entity = kg.entity_index[raw_id]
            try:
                query = parse_cloze(parts[0], scfg, mention_entity, mention_span)
            except ValueError as exc:
                raise DataFormatError(str(exc), path=path, line=lineno) from None
            items.append((query, parts[1]))
    return items
