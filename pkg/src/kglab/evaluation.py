"""Filtered link-prediction metrics, BLEU-1, and the inference cost model.

Ranking is filtered: every entity known to be a true answer for the query
(in any split) is dropped from the candidate pool before ranking, except the
gold itself. Ties rank pessimistically, so a constant scorer earns rank |E|
rather than an optimistic 1.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UnknownIdError
from .graph import FilterIndex, KnowledgeGraph, Triple
from .scoring import ModelParameters, masked_context, score_joint, score_two_tower
from .serialize import (SerializeConfig, encode_hr_pair, encode_masked_query,
                        encode_tail)

DIRECTIONS = ("predict_tail", "predict_head")


@dataclass(frozen=True)
class RankResult:
    known: int
    relation: int
    direction: str
    gold: int
    rank: int


@dataclass(frozen=True)
class MetricsReport:
    hits1: float
    hits3: float
    hits10: float
    mr: float
    mrr: float
    count: int

    def to_dict(self) -> dict:
        return {"hits1": self.hits1, "hits3": self.hits3, "hits10": self.hits10,
                "mr": self.mr, "mrr": self.mrr, "count": self.count}


def rank_gold(scores: dict, gold: int, filter_true=frozenset()) -> int:
    """Pessimistic filtered rank of the gold candidate.

    rank = 1 + (# strictly better) + (# equal-scored others), computed after
    removing filter-true candidates. The gold survives filtering even if the
    caller forgot to exclude it from the filter set.
    """
    if gold not in scores:
        raise UnknownIdError(f"gold id {gold} missing from the score map")
    gold_score = scores[gold]
    rank = 1
    for cand, s in scores.items():
        if cand == gold or cand in filter_true:
            continue
        if s >= gold_score:
            rank += 1
    return rank


def compute_metrics(ranks) -> MetricsReport:
    rank_list = list(ranks)
    if not rank_list:
        raise ValueError("no ranks to aggregate")
    n = len(rank_list)
    hits = {k: sum(1 for r in rank_list if r <= k) / n for k in (1, 3, 10)}
    mr = sum(rank_list) / n
    mrr = sum(1.0 / r for r in rank_list) / n
    return MetricsReport(hits1=hits[1], hits3=hits[3], hits10=hits[10],
                         mr=mr, mrr=mrr, count=n)


def _query_stream(kg: KnowledgeGraph, split: str, directions: str):
    if directions == "both":
        wanted = DIRECTIONS
    elif directions in ("tail", "predict_tail"):
        wanted = ("predict_tail",)
    elif directions in ("head", "predict_head"):
        wanted = ("predict_head",)
    else:
        raise ConfigurationError(f"directions must be tail, head or both, got {directions!r}")
    for triple in kg.splits[split]:
        for direction in wanted:
            if direction == "predict_tail":
                yield triple.head, triple.relation, direction, triple.tail
            else:
                yield triple.tail, triple.relation, direction, triple.head


def rank_queries(scorer, kg: KnowledgeGraph, split: str, filter_index: FilterIndex,
                 directions: str = "both") -> list[RankResult]:
    """Rank the gold answer of every query in a split.

    ``scorer(known, relation, direction)`` must return a score per entity id
    (any array-like of length |E|). Only the order of scores matters.
    """
    results = []
    for known, relation, direction, gold in _query_stream(kg, split, directions):
        scores = np.asarray(scorer(known, relation, direction), dtype=float)
        if scores.shape != (kg.num_entities,):
            raise ValueError(
                f"scorer returned {scores.shape}, expected ({kg.num_entities},)")
        true = filter_index.true_answers(known, relation, direction)
        score_map = {i: float(scores[i]) for i in range(kg.num_entities)}
        rank = rank_gold(score_map, gold, true - {gold})
        results.append(RankResult(known=known, relation=relation,
                                  direction=direction, gold=gold, rank=rank))
    return results


def link_prediction_eval(scorer, kg: KnowledgeGraph, split: str,
                         filter_index: FilterIndex,
                         directions: str = "both") -> MetricsReport:
    results = rank_queries(scorer, kg, split, filter_index, directions)
    return compute_metrics([r.rank for r in results])


def rank_results_tsv(results) -> str:
    lines = [f"{r.known}\t{r.relation}\t{r.direction}\t{r.gold}\t{r.rank}"
             for r in results]
    return "\n".join(lines) + ("\n" if lines else "")


# --- scorer adapters ---------------------------------------------------------

def make_masked_entity_scorer(params: ModelParameters, provider,
                              kg: KnowledgeGraph, cfg: SerializeConfig,
                              seed: int = 0):
    """Scores every entity as the MASK filler for (known, relation, direction).

    Returns raw logits; ranking is invariant to the softmax normalization.
    """
    def scorer(known, relation, direction):
        seq = encode_masked_query(kg, known, relation, direction, cfg, seed=seed)
        ctx = masked_context(params, provider.encode(seq))
        return params.entity_table @ ctx
    return scorer


def make_two_tower_scorer(params: ModelParameters, provider,
                          kg: KnowledgeGraph, cfg: SerializeConfig,
                          seed: int = 0):
    """Cosine of projected query vs every projected candidate encoding.

    Candidate-tower encodings are computed once up front; queries encode
    lazily per call.
    """
    cand = provider.encode_batch(
        [encode_tail(kg, t, cfg) for t in range(kg.num_entities)])
    if params.proj_tail is not None:
        cand = cand @ params.proj_tail.T
    norms = np.linalg.norm(cand, axis=1)
    if (norms == 0).any():
        raise ValueError("zero candidate-tower encoding")

    def scorer(known, relation, direction):
        seq = encode_hr_pair(kg, known, relation, cfg, seed=seed,
                             direction=direction)
        q = provider.encode(seq)
        if params.proj_query is not None:
            q = params.proj_query @ q
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ValueError("zero query-tower encoding")
        return (cand @ q) / (norms * qn)
    return scorer


def make_joint_scorer(params: ModelParameters, provider, kg: KnowledgeGraph,
                      cfg: SerializeConfig, seed: int = 0):
    """Joint sigmoid head applied to every candidate completion (O(|E|) encodes)."""
    def scorer(known, relation, direction):
        out = np.empty(kg.num_entities)
        for cand in range(kg.num_entities):
            if direction == "predict_tail":
                triple = Triple(known, relation, cand)
            else:
                triple = Triple(cand, relation, known)
            out[cand] = score_joint(params, provider, kg, triple, cfg, seed=seed)
        return out
    return scorer


def make_link_scorer(kind: str, params: ModelParameters, provider,
                     kg: KnowledgeGraph, cfg: SerializeConfig, seed: int = 0):
    if kind == "masked_entity":
        return make_masked_entity_scorer(params, provider, kg, cfg, seed)
    if kind == "two_tower":
        return make_two_tower_scorer(params, provider, kg, cfg, seed)
    if kind == "joint":
        return make_joint_scorer(params, provider, kg, cfg, seed)
    raise ConfigurationError(f"no link-prediction scorer for model kind {kind!r}")


# --- BLEU-1 ------------------------------------------------------------------

def bleu1(candidate_tokens, reference_token_lists) -> float:
    """Unigram BLEU: clipped precision times brevity penalty.

    Clipping bounds each candidate token's credit by its maximum count in any
    single reference. The brevity penalty uses the reference length closest
    to the candidate's (ties to the shorter reference).
    """
    refs = [list(r) for r in reference_token_lists]
    if not refs:
        raise ValueError("reference list is empty")
    cand = list(candidate_tokens)
    if not cand:
        return 0.0
    cand_counts = Counter(cand)
    max_ref = Counter()
    for ref in refs:
        for tok, cnt in Counter(ref).items():
            if cnt > max_ref[tok]:
                max_ref[tok] = cnt
    clipped = sum(min(cnt, max_ref[tok]) for tok, cnt in cand_counts.items())
    precision = clipped / len(cand)
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = math.exp(min(0.0, 1.0 - r / c))
    return precision * bp


# --- Table-style inference cost model ----------------------------------------

@dataclass(frozen=True)
class CostEstimate:
    method: str
    expression: str
    value: float


_COST_MODEL = {
    "kgbert": ("KGBERT", "L^2 * E^2 * R",
               lambda L, E, R: L ** 2 * E ** 2 * R),
    "star": ("StAR", "(L/2)^2 * E * (1+R)",
             lambda L, E, R: (L / 2) ** 2 * E * (1 + R)),
    "simkgc": ("SimKGC", "(L/2)^2 * E * (1+R)",
               lambda L, E, R: (L / 2) ** 2 * E * (1 + R)),
    "knnkge": ("kNN-KGE", "L^2 * E * R",
               lambda L, E, R: L ** 2 * E * R),
    "kgt5": ("KGT5", "(L/2)^3 * E * R",
             lambda L, E, R: (L / 2) ** 3 * E * R),
    "genkgc": ("GenKGC", "(L/2)^3 * E * R",
               lambda L, E, R: (L / 2) ** 3 * E * R),
}


def cost_model_methods() -> list[str]:
    return [v[0] for v in _COST_MODEL.values()]


def cost_model(method: str, L: float, E: float, R: float) -> CostEstimate:
    """Inference operation count for a scoring method, up to constants.

    L is the token length of a full triple description, E the entity count,
    R the relation count. Cross-encoders pay L^2 attention over E*R (or E^2*R)
    candidate completions; bi-encoders halve the sequence per tower; readers
    with a decoder pay a cubic term in the halved length.
    """
    if min(L, E, R) <= 0:
        raise ConfigurationError("L, E and R must all be positive")
    key = method.strip().lower().replace("-", "").replace("_", "")
    if key not in _COST_MODEL:
        known = ", ".join(sorted(v[0] for v in _COST_MODEL.values()))
        raise ConfigurationError(f"unknown method {method!r}; expected one of {known}")
    name, expr, fn = _COST_MODEL[key]
    return CostEstimate(method=name, expression=expr, value=float(fn(L, E, R)))
