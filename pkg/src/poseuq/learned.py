"""Trainable disagreement regressor: a small fully-connected network that maps
a pair of poses (14 raw features) to a scalar, trained so the ensemble-average
output predicts one estimator's ADD error.

Backprop and SGD are implemented directly in numpy; given a seed, training is
bit-for-bit reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, add_distance, compose, inverse, PointCloud

LAYER_SIZES = (14, 64, 64, 64, 1)


@dataclass(frozen=True)
class LearnedMetricParams:
    """Weights/biases for the 14 -> 64 -> 64 -> 64 -> 1 rectifier network."""

    weights: tuple
    biases: tuple
    target_estimator: int = 0
    object_id: str = ""

    def __post_init__(self):
        if len(self.weights) != len(LAYER_SIZES) - 1 or len(self.biases) != len(LAYER_SIZES) - 1:
            raise ValueError("wrong number of layers")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=float)
            b = np.array(b, dtype=float)
            if w.shape != (LAYER_SIZES[i + 1], LAYER_SIZES[i]) or b.shape != (LAYER_SIZES[i + 1],):
                raise ValueError(f"layer {i} shape mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @staticmethod
    def zeros(target_estimator: int = 0, object_id: str = "") -> "LearnedMetricParams":
        ws = [np.zeros((LAYER_SIZES[i + 1], LAYER_SIZES[i])) for i in range(len(LAYER_SIZES) - 1)]
        bs = [np.zeros(LAYER_SIZES[i + 1]) for i in range(len(LAYER_SIZES) - 1)]
        return LearnedMetricParams(tuple(ws), tuple(bs), target_estimator, object_id)


def init_params(rng: np.random.Generator, target_estimator: int = 0,
                object_id: str = "") -> LearnedMetricParams:
    """Scaled-uniform weight init, zero biases, drawn from the given generator."""
    ws, bs = [], []
    for i in range(len(LAYER_SIZES) - 1):
        fan_in, fan_out = LAYER_SIZES[i], LAYER_SIZES[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return LearnedMetricParams(tuple(ws), tuple(bs), target_estimator, object_id)


FEATURE_TRANS_SCALE = 100.0
"""Relative translations enter the network in centimeters.

Typical inter-estimator offsets are a few centimeters; in meters they would sit
two orders of magnitude below the unit-scale quaternion components and the
first layer would barely see them.
"""


def featurize(a: Pose, b: Pose) -> np.ndarray:
    """14 features for a pose pair: the two relative transforms between them.

    Concatenates [rel.quat, rel.trans] for a->b and b->a (canonical quaternion
    signs, translations scaled by FEATURE_TRANS_SCALE).  Encoding the pair by
    its relative transforms, rather than the raw absolute poses, puts the
    information the regressor needs -- how far apart the two poses are --
    directly in the input instead of behind a differencing operation the
    network would have to learn.
    """
    ab = compose(inverse(a), b)
    ba = compose(inverse(b), a)
    s = FEATURE_TRANS_SCALE
    return np.concatenate([ab.quat, s * ab.trans, ba.quat, s * ba.trans])


def forward(params: LearnedMetricParams, x) -> float:
    return float(forward_batch(params, np.asarray(x, dtype=float).reshape(1, -1))[0])


def forward_batch(params: LearnedMetricParams, X: np.ndarray) -> np.ndarray:
    """Evaluate the network on an (n, 14) feature batch."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != LAYER_SIZES[0]:
        raise ValueError("feature shape mismatch")
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.maximum(h, 0.0)
    return h[:, 0]


@dataclass(frozen=True)
class TrainingExample:
    """K predicted poses for one frame plus the ADD target of the tracked estimator."""

    poses: tuple
    add_target: float

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError("need at least two poses")
        if not (np.isfinite(self.add_target) and self.add_target >= 0):
            raise ValueError("ADD target must be finite and non-negative")


@dataclass(frozen=True)
class TrainConfig:
    """Settings for mini-batch SGD.

    target_scale multiplies the ADD targets during optimization (default 100,
    i.e. the network regresses centimeters).  Meter-valued targets are a few
    hundredths, which leaves the squared-error gradients too weak to pull the
    output layer away from initialization within the default epoch budget; the
    trained network therefore outputs scaled disagreement scores.  Scores are
    used for ranking only, so the scale does not affect downstream analyses.
    """

    epochs: int = 75
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    target_scale: float = 100.0

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate < 0 or self.batch_size <= 0:
            raise ValueError("invalid training configuration")
        if not (np.isfinite(self.target_scale) and self.target_scale > 0):
            raise ValueError("invalid training configuration")


def make_training_set(records, k: int, cloud: PointCloud) -> list:
    """Build examples from (poses, ground_truth) tuples for estimator index k."""
    out = []
    for poses, gt in records:
        out.append(TrainingExample(tuple(poses), add_distance(poses[k], gt, cloud)))
    return out


def pair_features(poses) -> np.ndarray:
    """Features for all ordered pairs (i, j), i != j, in a fixed order.

    The network output averaged over these rows is the symmetrized
    ensemble disagreement of the pose set.
    """
    rows = []
    K = len(poses)
    for i in range(K):
        for j in range(i + 1, K):
            rows.append(featurize(poses[i], poses[j]))
            rows.append(featurize(poses[j], poses[i]))
    return np.array(rows)


def ensemble_output(params: LearnedMetricParams, poses) -> float:
    """Symmetrized average pairwise network output over the pose set."""
    return float(forward_batch(params, pair_features(poses)).mean())


def _stack_features(examples):
    F = np.stack([pair_features(ex.poses) for ex in examples])  # (M, P, 14)
    y = np.array([ex.add_target for ex in examples])
    return F, y


def _forward_cached(params, X):
    acts = [X]
    last = len(params.weights) - 1
    h = X
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _backward(params, acts, dout):
    """Gradients of sum(dout * output) wrt all weights and biases."""
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    grad = dout.reshape(-1, 1)
    for i in range(len(params.weights) - 1, -1, -1):
        if i != len(params.weights) - 1:
            grad = grad * (acts[i + 1] > 0)
        grads_w[i] = grad.T @ acts[i]
        grads_b[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ params.weights[i]
    return grads_w, grads_b


def _loss_and_grads(params, F, y):
    M, P, _ = F.shape
    X = F.reshape(M * P, LAYER_SIZES[0])
    acts = _forward_cached(params, X)
    pred = acts[-1][:, 0].reshape(M, P).mean(axis=1)
    err = pred - y
    loss = float(err @ err)
    dout = np.repeat(2.0 * err / P, P)
    gw, gb = _backward(params, acts, dout)
    return loss, gw, gb


def loss(params: LearnedMetricParams, examples, cloud=None) -> float:
    """Sum of squared gaps between ensemble-average output and the ADD targets."""
    if not examples:
        raise ValueError("empty batch")
    F, y = _stack_features(examples)
    M, P, _ = F.shape
    pred = forward_batch(params, F.reshape(M * P, LAYER_SIZES[0])).reshape(M, P).mean(axis=1)
    return float(((pred - y) ** 2).sum())


def loss_gradients(params: LearnedMetricParams, examples):
    """Analytic gradients of loss() wrt every weight and bias tensor."""
    F, y = _stack_features(examples)
    _, gw, gb = _loss_and_grads(params, F, y)
    return gw, gb


def train(examples, config: TrainConfig, target_estimator: int = 0,
          object_id: str = "") -> LearnedMetricParams:
    """Mini-batch SGD on the squared-error objective; deterministic given the seed."""
    if len(examples) < 2:
        raise ValueError("need at least two training examples")
    rng = np.random.default_rng(config.seed)
    params = init_params(rng, target_estimator, object_id)
    F, y = _stack_features(examples)
    y = y * config.target_scale
    M = F.shape[0]
    ws = [w.copy() for w in params.weights]
    bs = [b.copy() for b in params.biases]
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = rng.permutation(M)
        for start in range(0, M, config.batch_size):
            idx = order[start:start + config.batch_size]
            cur = LearnedMetricParams(tuple(ws), tuple(bs), target_estimator, object_id)
            batch_loss, gw, gb = _loss_and_grads(cur, F[idx], y[idx])
            if not np.isfinite(batch_loss):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            scale = lr / len(idx)  # average the summed batch gradient
            for i in range(len(ws)):
                ws[i] = ws[i] - scale * gw[i]
                bs[i] = bs[i] - scale * gb[i]
    return LearnedMetricParams(tuple(ws), tuple(bs), target_estimator, object_id)


def save_params(path, params: LearnedMetricParams, extra: dict | None = None) -> None:
    """JSON serialization; float repr round-trips bit-exactly."""
    doc = {
        "object_id": params.object_id,
        "target_estimator": params.target_estimator,
        "layer_sizes": list(LAYER_SIZES),
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    if extra:
        doc.update(extra)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_params(path) -> tuple[LearnedMetricParams, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if tuple(doc.get("layer_sizes", ())) != LAYER_SIZES:
        raise ValueError(f"{path}: unsupported layer sizes")
    ws = []
    for i, flat in enumerate(doc["weights"]):
        ws.append(np.array(flat, dtype=float).reshape(LAYER_SIZES[i + 1], LAYER_SIZES[i]))
    bs = [np.array(b, dtype=float) for b in doc["biases"]]
    params = LearnedMetricParams(tuple(ws), tuple(bs),
                                 int(doc.get("target_estimator", 0)),
                                 str(doc.get("object_id", "")))
    return params, doc
