"""Translational and bilinear baseline scorers.

Both share the training and evaluation pipeline with the patch model: they
expose ``score_all(entities, relations)`` returning sigmoid scores against
every entity, with reverse relations handled as extra relation rows.
"""

import numpy as np

from .params import ParamStore, glorot_uniform
from .tensor import (absolute, gather_rows, matmul, mul, reduce_sum, reshape,
                     sigmoid, sqrt, transpose)


class _BaselineBase:
    def __init__(self, config, n_entities, n_relations, rng):
        """``rng=None`` builds a zero skeleton for checkpoint loading."""
        config.validate()
        self.config = config
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.params = ParamStore()
        d = config.d_e

        def init(shape):
            if rng is None:
                return np.zeros(shape, dtype=np.float32)
            return glorot_uniform(rng, shape)

        self.params.add("entity.embedding", init((n_entities, d)))
        self.params.add("relation.embedding", init((n_relations, d)))

    def score_against_all(self, entity, relation):
        return self.score_all([entity], [relation]).data[0]


class TransE(_BaselineBase):
    """score(h, r, t) = sigmoid(gamma - ||e_h + e_r - e_t||)."""

    kind = "transe"

    def score_all(self, entities, relations, training=False, rng=None):
        cfg = self.config
        e = gather_rows(self.params["entity.embedding"], np.asarray(entities))
        r = gather_rows(self.params["relation.embedding"], np.asarray(relations))
        translated = e + r                                   # [B, d]
        b = translated.shape[0]
        diff = reshape(translated, (b, 1, cfg.d_e)) - reshape(
            self.params["entity.embedding"], (1, self.n_entities, cfg.d_e))
        if cfg.transe_norm == "l1":
            dist = reduce_sum(absolute(diff), axis=-1)
        else:
            dist = sqrt(reduce_sum(mul(diff, diff), axis=-1))
        return sigmoid(cfg.transe_gamma - dist)


class DistMult(_BaselineBase):
    """score(h, r, t) = sigmoid(sum_i e_h[i] * e_r[i] * e_t[i])."""

    kind = "distmult"

    def score_all(self, entities, relations, training=False, rng=None):
        e = gather_rows(self.params["entity.embedding"], np.asarray(entities))
        r = gather_rows(self.params["relation.embedding"], np.asarray(relations))
        logits = matmul(mul(e, r), transpose(self.params["entity.embedding"]))
        return sigmoid(logits)
