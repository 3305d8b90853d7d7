"""Single-model uncertainty baselines: detector confidence and keypoint-resampling.

Both return values where larger means more uncertain, matching the ensemble
disagreement convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, KeypointSet, solve_pnp
from .geometry import PointCloud, Pose, add_distance

GUAPO_AGGREGATES = ("rms_add", "translation_std")


@dataclass(frozen=True, eq=False)
class DetectionMeta:
    """Detector-reported confidence and per-keypoint 2D noise scale."""

    confidence: float
    keypoint_sigma: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, DetectionMeta):
            return NotImplemented
        return (self.confidence == other.confidence
                and np.array_equal(self.keypoint_sigma, other.keypoint_sigma))

    def __hash__(self):
        return hash((self.confidence, self.keypoint_sigma.tobytes()))

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must be in [0, 1]")
        sig = np.array(self.keypoint_sigma, dtype=float)
        if sig.ndim != 1 or sig.shape[0] == 0:
            raise ValueError("keypoint_sigma must be a nonempty vector")
        if np.any(sig <= 0) or not np.all(np.isfinite(sig)):
            raise ValueError("keypoint sigmas must be positive and finite")
        sig.flags.writeable = False
        object.__setattr__(self, "keypoint_sigma", sig)


def confidence_uq(meta: DetectionMeta) -> float:
    """Uncertainty from the reported confidence: 1 - confidence."""
    return 1.0 - meta.confidence


def guapo_uq(observed: KeypointSet, meta: DetectionMeta, model_points: PointCloud,
             K: CameraIntrinsics, T: int = 50, seed: int = 0,
             aggregate: str = "rms_add", cloud: PointCloud | None = None) -> float:
    """Uncertainty from the spread of poses re-solved on resampled keypoints.

    Each of the T samples perturbs every keypoint by its 2D Gaussian and
    re-runs the PnP solve; the spread of the sampled poses around the
    unperturbed solution is the uncertainty. Deterministic given seed.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    if aggregate not in GUAPO_AGGREGATES:
        raise ValueError(f"unknown aggregate: {aggregate!r}")
    if meta.keypoint_sigma.shape[0] != len(observed):
        raise ValueError("sigma/keypoint count mismatch")
    if cloud is None:
        cloud = model_points
    base = solve_pnp(model_points, observed, K)
    rng = np.random.default_rng(seed)
    samples: list[Pose] = []
    for _ in range(T):
        noise = rng.normal(size=(len(observed), 2)) * meta.keypoint_sigma[:, None]
        perturbed = KeypointSet(observed.points_2d + noise, observed.visible)
        try:
            samples.append(solve_pnp(model_points, perturbed, K))
        except ValueError:
            continue
    if len(samples) < 2:
        raise RuntimeError("GUAPO sampling degenerate")
    if aggregate == "rms_add":
        d = np.array([add_distance(s, base, cloud) for s in samples])
        return float(np.sqrt((d ** 2).mean()))
    trans = np.array([s.trans for s in samples])
    return float(np.linalg.norm(trans.std(axis=0, ddof=0)))
