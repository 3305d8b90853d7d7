"""Average pairwise disagreement of a pose ensemble.

The ensemble uncertainty is the mean of a pose-pair distance over all
unordered estimator pairs; the pair distance is one of translational,
rotational, ADD, or the learned regressor.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .geometry import Pose, PointCloud, add_distance, rotation_angle, translation_distance
from .learned import LearnedMetricParams, featurize, forward

METRIC_KINDS = ("translational", "rotational", "add", "learned")


@dataclass(frozen=True)
class DisagreementMetric:
    """Tagged choice of pose-pair distance.

    kind "add" needs the object point cloud; kind "learned" needs trained
    network parameters.
    """

    kind: str
    cloud: PointCloud | None = None
    params: LearnedMetricParams | None = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind: {self.kind!r}")
        if self.kind == "add" and self.cloud is None:
            raise ValueError("add metric requires a point cloud")
        if self.kind == "learned" and self.params is None:
            raise ValueError("learned metric requires trained parameters")


@dataclass(frozen=True)
class EnsemblePrediction:
    """K pose hypotheses for one frame, in fixed estimator order."""

    poses: tuple
    estimator_ids: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        ids = tuple(self.estimator_ids)
        if len(poses) < 2:
            raise ValueError("ensemble requires at least two estimators")
        if len(ids) != len(poses):
            raise ValueError("estimator id count mismatch")
        if not all(isinstance(p, Pose) for p in poses):
            raise ValueError("poses must be Pose instances")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "estimator_ids", ids)

    def __len__(self):
        return len(self.poses)


def pair_disagreement(metric: DisagreementMetric, a: Pose, b: Pose) -> float:
    if metric.kind == "translational":
        return translation_distance(a, b)
    if metric.kind == "rotational":
        return rotation_angle(a, b)
    if metric.kind == "add":
        return add_distance(a, b, metric.cloud)
    # learned: symmetrize over argument order so the value is pair-symmetric
    return 0.5 * (forward(metric.params, featurize(a, b)) +
                  forward(metric.params, featurize(b, a)))


def ensemble_disagreement(metric: DisagreementMetric, pred: EnsemblePrediction) -> float:
    """Mean pairwise disagreement over all C(K, 2) estimator pairs."""
    if len(pred) < 2:
        raise ValueError("ensemble requires at least two estimators")
    vals = [pair_disagreement(metric, a, b) for a, b in combinations(pred.poses, 2)]
    return float(sum(vals) / len(vals))
