"""Tensor-rank tools for studying how single attention layers memorize
databases of (subject, predicate, object) facts."""

from .attention import (
    LayerConfig,
    LayerWeights,
    build_bundle,
    circuits,
    forward,
    init_weights,
    layer_rank_bounds,
    memorization_condition,
)
from .db import Database, RandomDBConfig, parse_triples, random_database, serialize, stats
from .metrics import argmax_accuracy, argmax_rows, memorizes, softmax_rows, softmax_threshold, tau_accuracy
from .rank_fx import dominance_scale, gram, rank_distortion_report, sphere_points
from .tensor import CPConfig, cp_als, db_rank_upper_bound, db_tensor, matrix_rank, tensor_rank_estimate
from .training import TrainConfig, evaluate, gradients, loss, train

__version__ = "0.1.0"
