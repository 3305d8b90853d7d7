"""Ensemble-disagreement uncertainty quantification for 6-DoF object pose estimation."""

from .geometry import (Pose, PointCloud, add_distance, rotation_angle,
                       translation_distance, compose, inverse,
                       cuboid_point_cloud, cuboid_keypoint_model, load_point_cloud)
from .camera import CameraIntrinsics, KeypointSet, project, solve_pnp, reprojection_rmse
from .ensemble import DisagreementMetric, EnsemblePrediction, pair_disagreement, \
    ensemble_disagreement
from .learned import LearnedMetricParams, TrainConfig, TrainingExample, featurize, \
    forward, loss, train
from .baselines import DetectionMeta, confidence_uq, guapo_uq
from .simulate import ScenarioConfig, ObjectSpec, EstimatorSpec, FrameRecord, \
    generate_dataset, default_config
from .evaluate import spearman, add_auc, select_view, correlation_analysis, \
    selection_analysis, train_learned_metric, usable_frames
from .rng import derive_rng

__version__ = "0.1.0"
