"""Training loop with hand-derived gradients and plain SGD.

Two trainable model kinds:

* masked_entity: multinomial logistic regression of the gold entity against
  a candidate set, logits = entity_row . context. Only the entity table (and
  the optional context projection) get gradients; the text encoder is frozen.
* two_tower: InfoNCE over cosine similarities with in-batch and mined hard
  negatives; gradients flow only into the two projection matrices.

Every gradient here has a closed form checked against finite differences in
the test suite, which is the point of keeping the optimizer to bare SGD.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .encoders import parse_store_header
from .errors import (ConfigurationError, DataFormatError,
                     DimensionMismatchError, TrainingDivergedError)
from .evaluation import link_prediction_eval, make_link_scorer
from .graph import KnowledgeGraph, build_filter_sets
from .scoring import ModelParameters, log_softmax, masked_context
from .serialize import (SerializeConfig, encode_hr_pair,
                        encode_interaction_prefix, encode_masked_query,
                        encode_tail)

TRAINABLE_KINDS = ("masked_entity", "two_tower")


@dataclass
class TrainerConfig:
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    label_smoothing: float = 0.1
    ema_decay: float = 0.999
    patience: int = 3
    min_delta: float = 1e-4
    negatives_k: int = 32
    temperature: float = 0.05
    fast_run: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigurationError("label_smoothing must be in [0, 1)")
        if not 0 <= self.ema_decay < 1:
            raise ConfigurationError("ema_decay must be in [0, 1)")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")


@dataclass
class LogRecord:
    step: int
    metrics: dict
    timestamp: float = field(default_factory=time.time)

    def to_json(self) -> str:
        payload = {"step": self.step, "timestamp": self.timestamp}
        payload.update(self.metrics)
        return json.dumps(payload, sort_keys=True)


@dataclass
class TrainingState:
    params: ModelParameters
    ema_shadow: ModelParameters
    epoch: int = 0
    step: int = 0
    best_valid_metric: float = -math.inf
    epochs_since_improvement: int = 0
    seed: int = 0
    log: list = field(default_factory=list)

    def inference_params(self, ema_enabled: bool) -> ModelParameters:
        return self.ema_shadow if ema_enabled else self.params


def cross_entropy_smoothed(logits, target: int, eps: float = 0.0) -> float:
    """Cross-entropy against an eps-smoothed one-hot target.

    q_target = 1 - eps + eps/K, every other class eps/K. eps = 0 is the
    plain negative log-likelihood of the target class.
    """
    z = np.asarray(logits, dtype=float)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ValueError("need a 1-d logit vector over at least 2 classes")
    if not np.isfinite(z).all():
        raise ValueError("non-finite logits")
    if not 0 <= eps < 1:
        raise ConfigurationError("label smoothing must be in [0, 1)")
    if not 0 <= target < z.shape[0]:
        raise IndexError(f"target {target} out of range for {z.shape[0]} classes")
    k = z.shape[0]
    q = np.full(k, eps / k)
    q[target] = 1.0 - eps + eps / k
    return float(-(q * log_softmax(z)).sum())


def smoothed_targets(k: int, target: int, eps: float) -> np.ndarray:
    q = np.full(k, eps / k)
    q[target] = 1.0 - eps + eps / k
    return q


def masked_entity_step(params: ModelParameters, batch, cfg: TrainerConfig):
    """Loss and gradients for a batch of masked-entity instances.

    Each instance is (context vector, gold entity id, candidate id list) with
    the gold among the candidates. Returns (mean loss, grads) where grads
    holds a dense entity_table cotangent and, when a context projection is
    configured, its cotangent as well. The context vectors are inputs, never
    parameters: the encoder stays frozen.
    """
    if not batch:
        raise ValueError("empty batch")
    grad_entity = np.zeros_like(params.entity_table)
    grad_proj = (np.zeros_like(params.proj_query)
                 if params.proj_query is not None else None)
    total = 0.0
    for ctx_raw, gold, candidates in batch:
        cands = list(candidates)
        if gold not in cands:
            raise ValueError(f"gold entity {gold} missing from its candidate set")
        target = cands.index(gold)
        ctx = masked_context(params, ctx_raw)
        rows = params.entity_table[cands]
        logits = rows @ ctx
        logp = log_softmax(logits)
        p = np.exp(logp)
        q = smoothed_targets(len(cands), target, cfg.label_smoothing)
        total += float(-(q * logp).sum())
        dlogit = p - q
        # d logit_j / d row_j = ctx, d logit_j / d proj = outer(row_j, ctx_raw)
        np.add.at(grad_entity, cands, dlogit[:, None] * ctx[None, :])
        if grad_proj is not None:
            grad_proj += np.outer(dlogit @ rows, np.asarray(ctx_raw, dtype=float))
    n = len(batch)
    grads = {"entity_table": grad_entity / n}
    if grad_proj is not None:
        grads["proj_query"] = grad_proj / n
    return total / n, grads


def _cosine_parts(a: np.ndarray, b: np.ndarray):
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero embedding encountered in contrastive step")
    cos = float(a @ b) / (na * nb)
    return cos, na, nb


def info_nce_step(params: ModelParameters, query_vecs, gold_ids, tail_vectors,
                  negatives, cfg: TrainerConfig):
    """Contrastive loss over cosine logits; gradients on projections only.

    For each example the candidate tails are its gold, the other in-batch
    golds, then its mined negatives (first occurrence kept on duplicates).
    Logits are cos(P_q u, P_t v) / temperature; loss is mean cross-entropy
    toward the gold.
    """
    if params.proj_query is None or params.proj_tail is None:
        raise ConfigurationError("two-tower training needs both projections")
    queries = [np.asarray(q, dtype=float) for q in query_vecs]
    golds = list(gold_ids)
    if len(queries) != len(golds):
        raise ValueError("query and gold counts disagree")
    if len(queries) < 2 and not any(negatives):
        raise ValueError("need a batch of >= 2 or explicit negatives")
    tails = np.asarray(tail_vectors, dtype=float)
    pq, pt = params.proj_query, params.proj_tail
    grad_q = np.zeros_like(pq)
    grad_t = np.zeros_like(pt)
    total = 0.0
    for i, (u, gold) in enumerate(zip(queries, golds)):
        cands = [gold]
        seen = {gold}
        for j, other in enumerate(golds):
            if j != i and other not in seen:
                cands.append(other)
                seen.add(other)
        for neg in negatives[i]:
            if neg not in seen:
                cands.append(neg)
                seen.add(neg)
        a = pq @ u
        na = float(np.linalg.norm(a))
        if na == 0.0:
            raise ValueError("zero embedding encountered in contrastive step")
        a_hat = a / na
        cos = np.empty(len(cands))
        b_list = []
        for c_idx, cand in enumerate(cands):
            b = pt @ tails[cand]
            cos_c, _, nb = _cosine_parts(a, b)
            cos[c_idx] = cos_c
            b_list.append((b, nb))
        logits = cos / cfg.temperature
        logp = log_softmax(logits)
        total += float(-logp[0])
        dlogit = np.exp(logp)
        dlogit[0] -= 1.0
        dcos = dlogit / cfg.temperature
        da = np.zeros_like(a)
        for c_idx, cand in enumerate(cands):
            b, nb = b_list[c_idx]
            b_hat = b / nb
            da += dcos[c_idx] * (b_hat - cos[c_idx] * a_hat) / na
            db = dcos[c_idx] * (a_hat - cos[c_idx] * b_hat) / nb
            grad_t += np.outer(db, tails[cand])
        grad_q += np.outer(da, u)
    n = len(queries)
    return total / n, {"proj_query": grad_q / n, "proj_tail": grad_t / n}


def topk_hard_negatives(score_fn, pool, k: int, true_answers=frozenset(),
                        gold=None):
    """Highest-scoring wrong answers: the negatives the model currently
    confuses with the truth.

    Everything filter-true and the gold are excluded first; ties break by
    ascending id. Returns fewer than k when the pool runs short.
    """
    ranked = sorted(
        ((-float(score_fn(c)), c) for c in pool
         if c != gold and c not in true_answers),
    )
    return [c for _, c in ranked[:k]]


def ema_update(shadow: ModelParameters, params: ModelParameters,
               decay: float) -> ModelParameters:
    """shadow' = decay * shadow + (1 - decay) * params, elementwise."""
    if not 0 <= decay < 1:
        raise ConfigurationError("ema decay must be in [0, 1)")

    def blend(s, p):
        if (s is None) != (p is None):
            raise DimensionMismatchError("shadow and params disagree on fields")
        if s is None:
            return None
        if s.shape != p.shape:
            raise DimensionMismatchError(
                f"shape mismatch in ema update: {s.shape} vs {p.shape}")
        return decay * s + (1.0 - decay) * p

    return ModelParameters(
        entity_table=blend(shadow.entity_table, params.entity_table),
        relation_table=blend(shadow.relation_table, params.relation_table),
        proj_query=blend(shadow.proj_query, params.proj_query),
        proj_tail=blend(shadow.proj_tail, params.proj_tail),
        classifier_w=blend(shadow.classifier_w, params.classifier_w),
        classifier_b=decay * shadow.classifier_b + (1 - decay) * params.classifier_b,
        temperature=params.temperature,
    )


def early_stop_check(history, patience: int, min_delta: float = 1e-4) -> bool:
    """True when the best metric has gone `patience` evaluations without
    improving by more than min_delta. Higher is better."""
    hist = list(history)
    if not hist:
        raise ValueError("metric history is empty")
    best = -math.inf
    since = 0
    for m in hist:
        if m > best + min_delta:
            best = m
            since = 0
        else:
            since += 1
    return since >= patience


def apply_sgd(params: ModelParameters, grads: dict, lr: float) -> None:
    for name, g in grads.items():
        if name == "classifier_b":
            params.classifier_b -= lr * float(g)
            continue
        arr = getattr(params, name)
        if arr is None or arr.shape != g.shape:
            raise DimensionMismatchError(f"gradient for {name} has wrong shape")
        arr -= lr * g


# --- fit orchestration -------------------------------------------------------

def _epoch_negative_sets(instances, contexts, params, filter_index, num_entities,
                         k):
    """Re-score the hard-negative pool once per epoch (candidate refresh)."""
    all_ids = range(num_entities)
    out = []
    for idx, (known, relation, direction, gold) in enumerate(instances):
        ctx = masked_context(params, contexts[idx])
        scores = params.entity_table @ ctx
        true = (filter_index.true_answers(known, relation, direction)
                if filter_index is not None else frozenset())
        negs = topk_hard_negatives(lambda c: scores[c], all_ids, k,
                                   true_answers=true, gold=gold)
        out.append([gold] + negs)
    return out


def _monitor_split(kg: KnowledgeGraph) -> str:
    if kg.splits.get("valid"):
        return "valid"
    return "train"


def fit(cfg: TrainerConfig, kind: str, kg: KnowledgeGraph, provider,
        scfg: SerializeConfig | None = None, log_sink=None,
        state: TrainingState | None = None) -> TrainingState:
    """Train a model of the given kind on the graph's train split.

    Per epoch: refresh hard negatives, shuffle, batched SGD steps, EMA blend,
    then a filtered hits@1 evaluation on the valid split (train split when no
    valid triples exist) that drives early stopping. fast_run caps work at
    2 epochs of 5 batches for smoke tests. Passing a previous state resumes
    its step counter and parameters.

    The provider is only ever read. Raises TrainingDivergedError on a
    non-finite loss.
    """
    if kind not in TRAINABLE_KINDS:
        raise ConfigurationError(
            f"model kind {kind!r} is not trainable; expected one of {TRAINABLE_KINDS}")
    scfg = scfg if scfg is not None else SerializeConfig()
    if kind == "masked_entity":
        return _fit_masked_entity(cfg, kg, provider, scfg, log_sink, state)
    return _fit_two_tower(cfg, kg, provider, scfg, log_sink, state)


def _emit(log_sink, records, record: LogRecord):
    records.append(record)
    if log_sink is None:
        return
    write = getattr(log_sink, "write", None)
    if write is not None:  # file-like sink gets JSON lines
        write(record.to_json() + "\n")
    else:                  # bare callables get the record itself
        log_sink(record)


def _fit_masked_entity(cfg, kg, provider, scfg, log_sink, state):
    rng = np.random.default_rng(cfg.seed)
    instances = []
    for triple in kg.splits["train"]:
        instances.append((triple.head, triple.relation, "predict_tail", triple.tail))
        instances.append((triple.tail, triple.relation, "predict_head", triple.head))
    if not instances:
        raise ConfigurationError("train split is empty")
    contexts = np.stack([
        provider.encode(encode_masked_query(kg, known, rel, direction, scfg,
                                            seed=cfg.seed))
        for known, rel, direction, gold in instances])
    filter_index = build_filter_sets(kg)
    if state is None:
        params = ModelParameters.initialize(kg.num_entities, kg.num_relations,
                                            provider.dimension, seed=cfg.seed)
        params.temperature = cfg.temperature
        state = TrainingState(params=params, ema_shadow=params.copy(),
                              seed=cfg.seed)
    monitor = _monitor_split(kg)
    ema_on = cfg.ema_decay > 0

    def evaluate_step() -> float:
        inference = state.inference_params(ema_on)
        scorer = make_link_scorer("masked_entity", inference, provider, kg,
                                  scfg, seed=cfg.seed)
        report = link_prediction_eval(scorer, kg, monitor, filter_index, "both")
        return report.hits1

    use_subset = 0 < cfg.negatives_k and cfg.negatives_k + 1 < kg.num_entities
    records: list[LogRecord] = []
    history: list[float] = []
    max_epochs = min(cfg.epochs, 2) if cfg.fast_run else cfg.epochs
    for epoch in range(max_epochs):
        state.epoch += 1
        if use_subset:
            candidate_sets = _epoch_negative_sets(
                instances, contexts, state.params, filter_index,
                kg.num_entities, cfg.negatives_k)
        else:
            everyone = list(range(kg.num_entities))
            candidate_sets = [everyone] * len(instances)
        order = rng.permutation(len(instances))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            if cfg.fast_run and batches >= 5:
                break
            chosen = order[start:start + cfg.batch_size]
            batch = [(contexts[i], instances[i][3], candidate_sets[i])
                     for i in chosen]
            loss, grads = masked_entity_step(state.params, batch, cfg)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {state.epoch}",
                    epoch=state.epoch, step=state.step)
            apply_sgd(state.params, grads, cfg.learning_rate)
            state.ema_shadow = ema_update(state.ema_shadow, state.params,
                                          cfg.ema_decay)
            state.step += 1
            epoch_loss += loss
            batches += 1
            _emit(log_sink, records, LogRecord(state.step, {"loss": loss}))
        metric = evaluate_step()
        history.append(metric)
        if metric > state.best_valid_metric + cfg.min_delta:
            state.best_valid_metric = metric
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
        _emit(log_sink, records, LogRecord(
            state.step, {"epoch": state.epoch,
                         "mean_loss": epoch_loss / max(batches, 1),
                         f"{monitor}_hits1": metric}))
        if early_stop_check(history, cfg.patience, cfg.min_delta):
            break
    state.log = records
    return state


def _fit_two_tower(cfg, kg, provider, scfg, log_sink, state):
    rng = np.random.default_rng(cfg.seed)
    instances = []
    for triple in kg.splits["train"]:
        instances.append((triple.head, triple.relation, "predict_tail", triple.tail))
        instances.append((triple.tail, triple.relation, "predict_head", triple.head))
    if not instances:
        raise ConfigurationError("train split is empty")
    queries = np.stack([
        provider.encode(encode_hr_pair(kg, known, rel, scfg, seed=cfg.seed,
                                       direction=direction))
        for known, rel, direction, gold in instances])
    tails = provider.encode_batch(
        [encode_tail(kg, t, scfg) for t in range(kg.num_entities)])
    filter_index = build_filter_sets(kg)
    if state is None:
        params = ModelParameters.initialize(kg.num_entities, kg.num_relations,
                                            provider.dimension, seed=cfg.seed,
                                            with_projections=True)
        params.temperature = cfg.temperature
        state = TrainingState(params=params, ema_shadow=params.copy(),
                              seed=cfg.seed)
    monitor = _monitor_split(kg)
    ema_on = cfg.ema_decay > 0

    def evaluate_step() -> float:
        inference = state.inference_params(ema_on)
        scorer = make_link_scorer("two_tower", inference, provider, kg, scfg,
                                  seed=cfg.seed)
        report = link_prediction_eval(scorer, kg, monitor, filter_index, "both")
        return report.hits1

    def cosine_scores(idx):
        a = state.params.proj_query @ queries[idx]
        b = tails @ state.params.proj_tail.T
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b, axis=1)
        return (b @ a) / np.maximum(na * nb, 1e-12)

    records: list[LogRecord] = []
    history: list[float] = []
    max_epochs = min(cfg.epochs, 2) if cfg.fast_run else cfg.epochs
    k = max(cfg.negatives_k, 0)
    for epoch in range(max_epochs):
        state.epoch += 1
        negative_sets = []
        for idx, (known, relation, direction, gold) in enumerate(instances):
            if k == 0:
                negative_sets.append([])
                continue
            scores = cosine_scores(idx)
            true = filter_index.true_answers(known, relation, direction)
            negative_sets.append(topk_hard_negatives(
                lambda c: scores[c], range(kg.num_entities), k,
                true_answers=true, gold=gold))
        order = rng.permutation(len(instances))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            if cfg.fast_run and batches >= 5:
                break
            chosen = order[start:start + cfg.batch_size]
            if len(chosen) < 2 and not any(negative_sets[i] for i in chosen):
                continue
            loss, grads = info_nce_step(
                state.params,
                [queries[i] for i in chosen],
                [instances[i][3] for i in chosen],
                tails,
                [negative_sets[i] for i in chosen],
                cfg)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {state.epoch}",
                    epoch=state.epoch, step=state.step)
            apply_sgd(state.params, grads, cfg.learning_rate)
            state.ema_shadow = ema_update(state.ema_shadow, state.params,
                                          cfg.ema_decay)
            state.step += 1
            epoch_loss += loss
            batches += 1
            _emit(log_sink, records, LogRecord(state.step, {"loss": loss}))
        metric = evaluate_step()
        history.append(metric)
        if metric > state.best_valid_metric + cfg.min_delta:
            state.best_valid_metric = metric
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
        _emit(log_sink, records, LogRecord(
            state.step, {"epoch": state.epoch,
                         "mean_loss": epoch_loss / max(batches, 1),
                         f"{monitor}_hits1": metric}))
        if early_stop_check(history, cfg.patience, cfg.min_delta):
            break
    state.log = records
    return state


def fit_interactions(cfg: TrainerConfig, histories, num_items: int, provider,
                     scfg: SerializeConfig | None = None,
                     log_sink=None) -> TrainingState:
    """Train item embeddings to predict the next item of each history.

    Every proper prefix of every history becomes one masked instance whose
    gold is the item that followed. Shares the masked-entity step, so the
    same gradient contracts apply.
    """
    scfg = scfg if scfg is not None else SerializeConfig()
    rng = np.random.default_rng(cfg.seed)
    instances = []
    for hist in histories:
        # accepts both bare item sequences and InteractionHistory records
        items = list(getattr(hist, "items", hist))
        for cut in range(1, len(items)):
            instances.append((tuple(items[:cut]), items[cut]))
    if not instances:
        raise ConfigurationError("no usable interaction prefixes")
    contexts = np.stack([
        provider.encode(encode_interaction_prefix(prefix, scfg))
        for prefix, gold in instances])
    params = ModelParameters.initialize(num_items, 1, provider.dimension,
                                        seed=cfg.seed)
    params.temperature = cfg.temperature
    state = TrainingState(params=params, ema_shadow=params.copy(),
                          seed=cfg.seed)
    everyone = list(range(num_items))
    use_subset = 0 < cfg.negatives_k and cfg.negatives_k + 1 < num_items
    records: list[LogRecord] = []
    history_metrics: list[float] = []
    ema_on = cfg.ema_decay > 0
    max_epochs = min(cfg.epochs, 2) if cfg.fast_run else cfg.epochs
    for epoch in range(max_epochs):
        state.epoch += 1
        if use_subset:
            candidate_sets = []
            for idx, (prefix, gold) in enumerate(instances):
                ctx = masked_context(state.params, contexts[idx])
                scores = state.params.entity_table @ ctx
                negs = topk_hard_negatives(lambda c: scores[c], everyone,
                                           cfg.negatives_k, gold=gold)
                candidate_sets.append([gold] + negs)
        else:
            candidate_sets = [everyone] * len(instances)
        order = rng.permutation(len(instances))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            if cfg.fast_run and batches >= 5:
                break
            chosen = order[start:start + cfg.batch_size]
            batch = [(contexts[i], instances[i][1], candidate_sets[i])
                     for i in chosen]
            loss, grads = masked_entity_step(state.params, batch, cfg)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {state.epoch}",
                    epoch=state.epoch, step=state.step)
            apply_sgd(state.params, grads, cfg.learning_rate)
            state.ema_shadow = ema_update(state.ema_shadow, state.params,
                                          cfg.ema_decay)
            state.step += 1
            epoch_loss += loss
            batches += 1
            _emit(log_sink, records, LogRecord(state.step, {"loss": loss}))
        inference = state.inference_params(ema_on)
        hits = 0
        for idx, (prefix, gold) in enumerate(instances):
            ctx = masked_context(inference, contexts[idx])
            scores = inference.entity_table @ ctx
            if int(np.argmax(scores)) == gold:
                hits += 1
        metric = hits / len(instances)
        history_metrics.append(metric)
        if metric > state.best_valid_metric + cfg.min_delta:
            state.best_valid_metric = metric
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
        _emit(log_sink, records, LogRecord(
            state.step, {"epoch": state.epoch,
                         "mean_loss": epoch_loss / max(batches, 1),
                         "train_hits1": metric}))
        if early_stop_check(history_metrics, cfg.patience, cfg.min_delta):
            break
    state.log = records
    return state


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(state: TrainingState, kind: str, path,
                    ema_enabled: bool = True) -> None:
    """One file: a JSON header line, then embedding-store rows.

    The stored parameter set is the inference one (EMA shadow when EMA is on),
    which is also what a resumed run continues from. Row keys: e<i> entity
    rows, r<j> relation rows, pq<i>/pt<i> projection rows, w classifier.
    """
    params = state.inference_params(ema_enabled)
    header = {
        "kind": kind,
        "dim": params.dim,
        "num_entities": params.num_entities,
        "num_relations": params.relation_table.shape[0],
        "temperature": params.temperature,
        "classifier_b": params.classifier_b,
        "epoch": state.epoch,
        "step": state.step,
        "best_valid_metric": (None if state.best_valid_metric == -math.inf
                              else state.best_valid_metric),
        "epochs_since_improvement": state.epochs_since_improvement,
        "seed": state.seed,
        "has_projections": params.proj_query is not None,
        "has_classifier": params.classifier_w is not None,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        f.write(f"d={params.dim}\n")
        for i in range(params.num_entities):
            f.write(f"e{i}\t{_fmt(params.entity_table[i])}\n")
        for j in range(params.relation_table.shape[0]):
            f.write(f"r{j}\t{_fmt(params.relation_table[j])}\n")
        if params.proj_query is not None:
            for i in range(params.dim):
                f.write(f"pq{i}\t{_fmt(params.proj_query[i])}\n")
            for i in range(params.dim):
                f.write(f"pt{i}\t{_fmt(params.proj_tail[i])}\n")
        if params.classifier_w is not None:
            f.write(f"w\t{_fmt(params.classifier_w)}\n")


def _fmt(vec) -> str:
    return " ".join(repr(float(x)) for x in vec)


def load_checkpoint(path) -> tuple[TrainingState, str]:
    with open(path, "r", encoding="utf-8") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError:
            raise DataFormatError("checkpoint must start with a JSON header",
                                  path=path, line=1) from None
        dim_line = f.readline()
        dim = parse_store_header(dim_line, path=path)
        if dim != header["dim"]:
            raise DataFormatError("header dim disagrees with store dim", path=path)
        rows = {}
        for lineno, raw in enumerate(f, start=3):
            line = raw.rstrip("\n")
            if not line:
                continue
            key, sep, body = line.partition("\t")
            if not sep:
                raise DataFormatError("expected key<TAB>values", path=path,
                                      line=lineno)
            values = np.asarray([float(x) for x in body.split()])
            if values.shape != (dim,):
                raise DataFormatError(f"row {key} has wrong width", path=path,
                                      line=lineno)
            rows[key] = values
    ne, nr = header["num_entities"], header["num_relations"]
    try:
        entity = np.stack([rows[f"e{i}"] for i in range(ne)])
        relation = np.stack([rows[f"r{j}"] for j in range(nr)])
        proj_q = proj_t = None
        if header["has_projections"]:
            proj_q = np.stack([rows[f"pq{i}"] for i in range(dim)])
            proj_t = np.stack([rows[f"pt{i}"] for i in range(dim)])
        w = rows["w"] if header["has_classifier"] else None
    except KeyError as exc:
        raise DataFormatError(f"checkpoint is missing row {exc}", path=path) from None
    params = ModelParameters(entity_table=entity, relation_table=relation,
                             proj_query=proj_q, proj_tail=proj_t,
                             classifier_w=w, classifier_b=header["classifier_b"],
                             temperature=header["temperature"])
    best = header["best_valid_metric"]
    state = TrainingState(
        params=params, ema_shadow=params.copy(), epoch=header["epoch"],
        step=header["step"],
        best_valid_metric=-math.inf if best is None else best,
        epochs_since_improvement=header["epochs_since_improvement"],
        seed=header["seed"])
    return state, header["kind"]
