"""LLM-based link prediction: retrieve, prompt, complete, parse.

The pipeline turns one (head, relation) query into a three-part prompt:
a task description carrying retrieved candidate entities, a handful of
retrieved demonstrations (optionally with templated rationales), and the
test query itself. A chat client answers it and the reply is mapped back
onto a candidate entity.

Clients are interchangeable: the real one talks to an OpenAI-style chat
endpoint, mocks answer locally so the whole pipeline runs offline.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .graph import (FilterIndex, KnowledgeGraph, build_filter_sets,
                    collapse_whitespace, verbalize_triple)
from .net import RateLimiter, post_json_with_retries, requests_transport

ENV_API_BASE = "KGLAB_API_BASE"
ENV_API_KEY = "KGLAB_API_KEY"


def bm25_tokens(text: str) -> list[str]:
    return text.lower().split()


class Bm25Index:
    """Okapi index over tokenized documents.

    Uses the idf variant ln((N - df + 0.5)/(df + 0.5) + 1), which is
    nonnegative for every df <= N, so scores never go negative and
    "no shared term" cleanly means score zero.
    """

    def __init__(self, corpus, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.doc_counts = [Counter(bm25_tokens(doc)) for doc in corpus]
        self.doc_lens = [sum(c.values()) for c in self.doc_counts]
        self.num_docs = len(self.doc_counts)
        self.avg_len = (sum(self.doc_lens) / self.num_docs
                        if self.num_docs else 0.0)
        self.postings: dict[str, list[int]] = {}
        for doc_id, counts in enumerate(self.doc_counts):
            for term in counts:
                self.postings.setdefault(term, []).append(doc_id)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.num_docs - df + 0.5) / (df + 0.5) + 1.0)

    def score(self, doc_id: int, query_tokens) -> float:
        counts = self.doc_counts[doc_id]
        if not counts:
            return 0.0
        length_norm = 1.0 - self.b + self.b * self.doc_lens[doc_id] / self.avg_len
        total = 0.0
        # query terms keep their multiplicity: a repeated term counts twice
        for term in query_tokens:
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            total += self.idf(term) * tf * (self.k1 + 1) / (tf + self.k1 * length_norm)
        return total


def bm25_build(corpus, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    return Bm25Index(corpus, k1=k1, b=b)


def bm25_topn(index: Bm25Index, query: str, n: int) -> list[tuple[int, float]]:
    """Top-n (doc id, score) pairs, descending score then ascending doc id.

    Documents sharing no term with the query never appear.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    tokens = bm25_tokens(query)
    touched = set()
    for term in set(tokens):
        touched.update(index.postings.get(term, ()))
    scored = [(-index.score(doc_id, tokens), doc_id) for doc_id in touched]
    scored.sort()
    return [(doc_id, -neg) for neg, doc_id in scored[:n]]


# --- retrieval over the train split ------------------------------------------

class TripleRetriever:
    """BM25 index over verbalized train triples, with the triples kept
    alongside so hits map back to (h, r, t)."""

    def __init__(self, kg: KnowledgeGraph, k1: float = 1.2, b: float = 0.75):
        self.kg = kg
        self.triples = list(kg.splits.get("train", []))
        self.docs = [verbalize_triple(kg, t) for t in self.triples]
        self.index = bm25_build(self.docs, k1=k1, b=b)


def render_query(kg: KnowledgeGraph, head: int, relation: int) -> str:
    return collapse_whitespace(
        f"{kg.entity(head).surface_name} {kg.relation(relation).display_name}")


def select_candidates(kg: KnowledgeGraph, retriever: TripleRetriever,
                      query: tuple[int, int], n: int = 100) -> list[str]:
    """Candidate entity names for a (head, relation) query.

    Retrieves train triples by BM25 over "head-name relation-name" and walks
    their tails in retrieval order, deduplicating, until n names are
    collected. Only surface names ever reach the prompt.
    """
    head, relation = query
    text = render_query(kg, head, relation)
    hits = bm25_topn(retriever.index, text, max(n, len(retriever.triples))) \
        if retriever.triples else []
    names: list[str] = []
    seen: set[int] = set()
    for doc_id, _score in hits:
        tail = retriever.triples[doc_id].tail
        if tail in seen:
            continue
        seen.add(tail)
        names.append(kg.entity(tail).surface_name)
        if len(names) >= n:
            break
    return names


@dataclass(frozen=True)
class Demonstration:
    question: str
    answer: str
    rationale: str | None = None


def rationale_template(kg: KnowledgeGraph, triple) -> str:
    h = kg.entity(triple.head).surface_name
    t = kg.entity(triple.tail).surface_name
    r = kg.relation(triple.relation).display_name
    return f"{h} is connected to {t} via {r}, so the answer is {t}."


def select_demonstrations(kg: KnowledgeGraph, retriever: TripleRetriever,
                          query: tuple[int, int], n: int = 5,
                          with_rationale: bool = False) -> list[Demonstration]:
    """Top-n retrieved train triples rendered as worked examples.

    Strictly train-split: the retriever only ever indexes train triples, so
    no evaluation answer can leak into the prompt.
    """
    if n <= 0:
        return []
    head, relation = query
    text = render_query(kg, head, relation)
    if not retriever.triples:
        return []
    hits = bm25_topn(retriever.index, text, n)
    demos = []
    for doc_id, _score in hits:
        triple = retriever.triples[doc_id]
        demos.append(Demonstration(
            question=render_query(kg, triple.head, triple.relation),
            answer=kg.entity(triple.tail).surface_name,
            rationale=rationale_template(kg, triple) if with_rationale else None))
    return demos


# --- prompt ------------------------------------------------------------------

DEFAULT_TASK_TEMPLATE = ("Given a query about a missing tail entity, answer "
                         "with exactly one entity from the candidate list.")


@dataclass(frozen=True)
class Prompt:
    task_description: str
    candidates: tuple[str, ...]
    demonstrations: tuple[Demonstration, ...]
    test_query: str
    rendered: str


def build_prompt(task_template: str, candidates, demonstrations,
                 test_query: str) -> Prompt:
    """Assemble the three prompt sections in fixed order.

    Section 1: task instruction plus a "Candidates:" line. Section 2: each
    demonstration as "Q: ... A: ...", its rationale on its own line between
    question and answer when present. Section 3: the test query, ending in
    "A: " with a single trailing space for the model to complete.
    """
    cands = tuple(candidates)
    if not cands:
        raise ValueError("candidate list is empty")
    demos = tuple(demonstrations)
    lines = [task_template, "Candidates: " + ", ".join(cands)]
    if demos:
        lines.append("")
        for d in demos:
            if d.rationale:
                lines.append(f"Q: {d.question}")
                lines.append(d.rationale)
                lines.append(f"A: {d.answer}")
            else:
                lines.append(f"Q: {d.question} A: {d.answer}")
    lines.append("")
    lines.append(f"Q: {test_query} A: ")
    return Prompt(task_description=task_template, candidates=cands,
                  demonstrations=demos, test_query=test_query,
                  rendered="\n".join(lines))


def parse_candidates_line(rendered: str) -> list[str]:
    for line in rendered.splitlines():
        if line.startswith("Candidates: "):
            return line[len("Candidates: "):].split(", ")
    raise ValueError("prompt has no candidates line")


# --- clients -----------------------------------------------------------------

@dataclass
class LlmClientConfig:
    api_base: str
    api_key: str = ""
    model: str = "gpt-3.5-turbo"
    max_retries: int = 3
    backoff_base: float = 0.1
    temperature: float = 0.0
    timeout: float = 60.0
    min_interval: float = 0.1

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "LlmClientConfig":
        base = os.environ.get(ENV_API_BASE, "")
        if not base:
            raise ConfigurationError(f"set {ENV_API_BASE} to use the chat client")
        return cls(api_base=base, api_key=os.environ.get(ENV_API_KEY, ""),
                   **overrides)


class OpenAiChatClient:
    """Chat-completions client; temperature pinned for reproducibility."""

    def __init__(self, config: LlmClientConfig, transport=None, sleep=None,
                 clock=None):
        import time as _time
        if not config.api_base:
            raise ConfigurationError("chat client has no API base URL")
        if not config.api_key:
            raise ConfigurationError("chat client has no credential; "
                                     f"set {ENV_API_KEY}")
        self.config = config
        self._transport = transport if transport is not None else requests_transport
        self._sleep = sleep if sleep is not None else _time.sleep
        self._limiter = RateLimiter(
            config.min_interval, clock=clock if clock is not None else _time.monotonic,
            sleep=self._sleep)
        self.last_retry_count = 0

    def complete(self, text: str, context=None) -> str:
        del context  # out-of-band hints are for mocks only
        url = self.config.api_base.rstrip("/") + "/chat/completions"
        payload = {"model": self.config.model,
                   "temperature": self.config.temperature,
                   "messages": [{"role": "user", "content": text}]}
        headers = {"Content-Type": "application/json",
                   "Authorization": f"Bearer {self.config.api_key}"}
        body, retries = post_json_with_retries(
            self._transport, url, payload, headers, self.config.timeout,
            self.config.max_retries, self.config.backoff_base,
            sleep=self._sleep, limiter=self._limiter)
        self.last_retry_count = retries
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ConfigurationError(
                f"chat response missing choices[0].message.content: {body!r}") from None


class ConstantMock:
    """Always answers with the same text."""

    def __init__(self, text: str):
        self.text = text

    def complete(self, text: str, context=None) -> str:
        return self.text


class OracleMock:
    """Answers with the gold name passed out-of-band; the perfect model."""

    def complete(self, text: str, context=None) -> str:
        if not context or "gold_name" not in context:
            raise ValueError("oracle mock needs a gold_name in its context")
        return context["gold_name"]


class ScriptedMock:
    """Plays back a fixed list of responses in order."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def complete(self, text: str, context=None) -> str:
        resp = self.responses[self.calls % len(self.responses)]
        self.calls += 1
        return resp


def llm_complete(client, prompt: Prompt, context=None) -> str:
    return client.complete(prompt.rendered, context=context)


# --- answer parsing ----------------------------------------------------------

def token_jaccard(a: str, b: str) -> float:
    ta, tb = set(bm25_tokens(a)), set(bm25_tokens(b))
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def parse_prediction(response: str, candidate_names) -> int | None:
    """Map a free-text answer onto a candidate, or None for no match.

    Pass 1: candidates occurring verbatim (case-insensitive) in the response;
    the longest such occurrence wins, earlier candidate on equal length.
    Pass 2: highest token-set Jaccard overlap, threshold 0.5, earlier
    candidate winning ties. Returns the candidate's position.
    """
    cands = list(candidate_names)
    if not cands:
        raise ValueError("candidate list is empty")
    low = response.lower()
    best_idx = None
    best_len = 0
    for idx, name in enumerate(cands):
        n = name.lower()
        if n and n in low and len(n) > best_len:
            best_idx, best_len = idx, len(n)
    if best_idx is not None:
        return best_idx
    best_score = 0.0
    for idx, name in enumerate(cands):
        score = token_jaccard(response, name)
        if score > best_score:
            best_idx, best_score = idx, score
    return best_idx if best_score >= 0.5 else None


# --- end-to-end evaluation ---------------------------------------------------

@dataclass
class LlmEvalConfig:
    sample_size: int = 224
    n_candidates: int = 100
    n_demos: int = 5
    with_rationale: bool = False
    split: str = "test"
    seed: int = 0
    task_template: str = DEFAULT_TASK_TEMPLATE


@dataclass
class LlmEvalResult:
    hits1: float
    count: int
    transcript: list = field(default_factory=list)


def stratified_sample(kg: KnowledgeGraph, split: str, sample_size: int,
                      seed: int = 0):
    """Even per-relation quotas over a split, remainder to lower relation ids.

    A relation with fewer triples than its quota contributes all it has; the
    shortfall is not redistributed.
    """
    triples = kg.splits.get(split, [])
    if sample_size > len(triples):
        raise ValueError(
            f"sample size {sample_size} exceeds {split} split size {len(triples)}")
    by_relation: dict[int, list] = {}
    for t in triples:
        by_relation.setdefault(t.relation, []).append(t)
    relations = sorted(by_relation)
    base, extra = divmod(sample_size, len(relations))
    rng = np.random.default_rng(seed)
    chosen = []
    for pos, rel in enumerate(relations):
        quota = base + (1 if pos < extra else 0)
        pool = by_relation[rel]
        take = min(quota, len(pool))
        idx = sorted(rng.choice(len(pool), size=take, replace=False))
        chosen.extend(pool[i] for i in idx)
    return chosen


def query_type(filter_index: FilterIndex, head: int, relation: int) -> str:
    return "1-1" if len(filter_index.tails_of(head, relation)) == 1 else "1-n"


def evaluate_llm_kgc(kg: KnowledgeGraph, client, cfg: LlmEvalConfig,
                     transcript_sink=None) -> LlmEvalResult:
    """Run the whole retrieve-prompt-complete-parse loop over a stratified
    sample and measure hits@1 by exact entity-id match.

    Each query appends one transcript record; when a sink is given the
    record is written immediately, so an aborted run still leaves a usable
    partial transcript.
    """
    retriever = TripleRetriever(kg)
    filter_index = build_filter_sets(kg)
    sample = stratified_sample(kg, cfg.split, cfg.sample_size, cfg.seed)
    name_fallback = [kg.entity(i).surface_name
                     for i in range(kg.num_entities)][:cfg.n_candidates]
    transcript = []
    hits = 0
    for triple in sample:
        candidates = select_candidates(kg, retriever, (triple.head, triple.relation),
                                       cfg.n_candidates)
        if not candidates:
            # nothing retrieved (query shares no token with any train triple);
            # fall back to the first n entity names so the prompt stays legal
            candidates = list(name_fallback)
        demos = select_demonstrations(kg, retriever,
                                      (triple.head, triple.relation),
                                      cfg.n_demos, cfg.with_rationale)
        prompt = build_prompt(cfg.task_template, candidates, demos,
                              render_query(kg, triple.head, triple.relation))
        gold_name = kg.entity(triple.tail).surface_name
        response = llm_complete(client, prompt,
                                context={"gold_name": gold_name,
                                         "candidates": candidates})
        match = parse_prediction(response, candidates)
        predicted_id = None
        if match is not None:
            predicted_name = candidates[match]
            for eid in range(kg.num_entities):
                if kg.entity(eid).surface_name == predicted_name:
                    predicted_id = eid
                    break
        hit = predicted_id == triple.tail
        hits += int(hit)
        record = {
            "h": kg.raw_entity_ids[triple.head],
            "r": kg.raw_relation_ids[triple.relation],
            "gold": kg.raw_entity_ids[triple.tail],
            "prediction": (None if predicted_id is None
                           else kg.raw_entity_ids[predicted_id]),
            "raw_response": response,
            "hit": hit,
            "query_type": query_type(filter_index, triple.head, triple.relation),
        }
        transcript.append(record)
        if transcript_sink is not None:
            transcript_sink.write(json.dumps(record, sort_keys=True) + "\n")
    return LlmEvalResult(hits1=hits / len(sample) if sample else 0.0,
                         count=len(sample), transcript=transcript)
