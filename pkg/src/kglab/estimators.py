"""Estimator-style wrappers around the functional training engine.

Both estimators follow the usual conventions: constructor arguments are
stored untouched, fitted state lives in trailing-underscore attributes, fit
returns self, and get_params/set_params come from the base class so the
estimators compose with model-selection utilities.

X for fit is a KnowledgeGraph; X for transform/predict is a list of link
queries (known id, relation id[, direction]). That is unusual next to array
estimators but keeps the whole toolkit behind one idiom.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .encoders import HashEncoder
from .evaluation import link_prediction_eval, make_link_scorer
from .graph import build_filter_sets
from .serialize import SerializeConfig, encode_hr_pair, encode_masked_query
from .training import TrainerConfig, fit
from .validation import check_kg, check_queries


class _KgeBase(BaseEstimator):
    _kind = ""

    def __init__(self, dim=128, learning_rate=0.05, epochs=50, batch_size=32,
                 label_smoothing=0.1, ema_decay=0.999, patience=3,
                 min_delta=1e-4, negatives_k=32, temperature=0.05,
                 fast_run=False, seed=0, max_len=128, neighbor_k=0,
                 provider=None):
        self.dim = dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.label_smoothing = label_smoothing
        self.ema_decay = ema_decay
        self.patience = patience
        self.min_delta = min_delta
        self.negatives_k = negatives_k
        self.temperature = temperature
        self.fast_run = fast_run
        self.seed = seed
        self.max_len = max_len
        self.neighbor_k = neighbor_k
        self.provider = provider

    def _trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, label_smoothing=self.label_smoothing,
            ema_decay=self.ema_decay, patience=self.patience,
            min_delta=self.min_delta, negatives_k=self.negatives_k,
            temperature=self.temperature, fast_run=self.fast_run,
            seed=self.seed)

    def fit(self, X, y=None):
        kg = check_kg(X)
        provider = (self.provider if self.provider is not None
                    else HashEncoder(self.dim, self.seed))
        scfg = SerializeConfig(max_len=self.max_len, neighbor_k=self.neighbor_k)
        self.state_ = fit(self._trainer_config(), self._kind, kg, provider, scfg)
        self.kg_ = kg
        self.provider_ = provider
        self.scfg_ = scfg
        self.filter_ = build_filter_sets(kg)
        self.n_features_in_ = provider.dimension
        return self

    def _inference_params(self):
        return self.state_.inference_params(self.ema_decay > 0)

    def _scorer(self):
        return make_link_scorer(self._kind, self._inference_params(),
                                self.provider_, self.kg_, self.scfg_,
                                seed=self.seed)

    def predict(self, X):
        """Top-ranked entity id for each (known, relation[, direction]) query,
        under filtered ranking (known-true answers removed)."""
        check_is_fitted(self, "state_")
        scorer = self._scorer()
        out = []
        for known, relation, direction in check_queries(X):
            scores = np.asarray(scorer(known, relation, direction), dtype=float)
            true = self.filter_.true_answers(known, relation, direction)
            for eid in true:
                scores[eid] = -np.inf
            out.append(int(np.argmax(scores)))
        return np.asarray(out)

    def score(self, X=None, y=None, split: str = "test") -> float:
        """Filtered hits@1 on a split of the fitted graph (sklearn-style
        higher-is-better scalar)."""
        check_is_fitted(self, "state_")
        report = link_prediction_eval(self._scorer(), self.kg_, split,
                                      self.filter_, "both")
        return report.hits1


class MaskedEntityKGE(_KgeBase):
    """Masked-entity model: trainable entity table over frozen text encodings."""

    _kind = "masked_entity"

    def transform(self, X):
        """Encode queries into the masked-query context vectors the entity
        table is scored against."""
        check_is_fitted(self, "state_")
        rows = [self.provider_.encode(
                    encode_masked_query(self.kg_, known, relation, direction,
                                        self.scfg_, seed=self.seed))
                for known, relation, direction in check_queries(X)]
        return np.stack(rows) if rows else np.zeros((0, self.n_features_in_))


class TwoTowerKGE(_KgeBase):
    """Two-tower model: learned projections over frozen tower encodings."""

    _kind = "two_tower"

    def transform(self, X):
        """Projected query-tower vectors for (known, relation[, direction])."""
        check_is_fitted(self, "state_")
        params = self._inference_params()
        rows = []
        for known, relation, direction in check_queries(X):
            vec = self.provider_.encode(
                encode_hr_pair(self.kg_, known, relation, self.scfg_,
                               seed=self.seed, direction=direction))
            if params.proj_query is not None:
                vec = params.proj_query @ vec
            rows.append(vec)
        return np.stack(rows) if rows else np.zeros((0, self.n_features_in_))


__all__ = ["MaskedEntityKGE", "TwoTowerKGE"]
