"""JSON-Lines dataset persistence.

Line 1 is a header (format version, scenario echo, registries); every further
line is one frame record. Floats are written with 9 significant digits and
keys in fixed order, so identical datasets serialize to identical bytes and
serialize/parse/serialize is byte-stable.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .baselines import DetectionMeta
from .camera import CameraIntrinsics, KeypointSet
from .geometry import Pose
from .simulate import (EstimatorObservation, EstimatorSpec, FrameRecord, ObjectSpec,
                       ScenarioConfig)

FORMAT_VERSION = 1
KEYPOINT_COUNT = 9


def _q9(x: float) -> float:
    """Quantize to 9 significant digits; idempotent under parse/serialize."""
    return float(f"{float(x):.9g}")


def _qlist(values):
    return [_q9(v) for v in np.asarray(values, dtype=float).ravel()]


def _pose_doc(p: Pose) -> dict:
    return {"quat": _qlist(p.quat), "trans": _qlist(p.trans)}


def _pose_from_doc(doc) -> Pose:
    return Pose(np.array(doc["quat"], dtype=float), np.array(doc["trans"], dtype=float))


def _intrinsics_doc(K: CameraIntrinsics) -> dict:
    return {"fx": _q9(K.fx), "fy": _q9(K.fy), "cx": _q9(K.cx), "cy": _q9(K.cy),
            "width": int(K.width), "height": int(K.height)}


def _intrinsics_from_doc(doc) -> CameraIntrinsics:
    return CameraIntrinsics(doc["fx"], doc["fy"], doc["cx"], doc["cy"],
                            int(doc["width"]), int(doc["height"]))


def config_to_doc(config: ScenarioConfig) -> dict:
    return {
        "n_sequences": config.n_sequences,
        "frames_per_sequence": config.frames_per_sequence,
        "objects_per_scene": list(config.objects_per_scene),
        "objects": [{"object_id": o.object_id, "extents_m": _qlist(o.extents_m)}
                    for o in config.objects],
        "estimators": [{
            "estimator_id": e.estimator_id,
            "sigma0_px": _q9(e.sigma0_px),
            "sigma_h_px": _q9(e.sigma_h_px),
            "gross_failure_base_prob": _q9(e.gross_failure_base_prob),
            "bias_rotation_deg": _q9(e.bias_rotation_deg),
            "bias_translation_m": _q9(e.bias_translation_m),
        } for e in config.estimators],
        "intrinsics": _intrinsics_doc(config.intrinsics),
        "orbit_radius_m": _q9(config.orbit_radius_m),
        "orbit_height_m": _q9(config.orbit_height_m),
        "orbit_start_deg": _q9(config.orbit_start_deg),
        "orbit_end_deg": _q9(config.orbit_end_deg),
        "table_radius_m": _q9(config.table_radius_m),
        "placement_clearance_m": _q9(config.placement_clearance_m),
        "max_placement_attempts": config.max_placement_attempts,
        "occlusion_margin_m": _q9(config.occlusion_margin_m),
        "occlusion_weight": _q9(config.occlusion_weight),
        "off_axis_weight": _q9(config.off_axis_weight),
        "failure_h_gain": _q9(config.failure_h_gain),
        "confidence_base": _q9(config.confidence_base),
        "confidence_gain": _q9(config.confidence_gain),
        "confidence_noise_std": _q9(config.confidence_noise_std),
        "confidence_saturation_power": _q9(config.confidence_saturation_power),
        "master_seed": config.master_seed,
    }


def config_from_doc(doc: dict) -> ScenarioConfig:
    def need(key, typ=None):
        if key not in doc:
            raise ValueError(f"config: missing field '{key}'")
        return doc[key]

    objects = tuple(ObjectSpec(o["object_id"], tuple(o["extents_m"]))
                    for o in need("objects"))
    estimators = tuple(EstimatorSpec(e["estimator_id"], e["sigma0_px"], e["sigma_h_px"],
                                     e["gross_failure_base_prob"],
                                     e.get("bias_rotation_deg", 0.0),
                                     e.get("bias_translation_m", 0.0))
                       for e in need("estimators"))
    defaults = ScenarioConfig(objects=objects, estimators=estimators)
    kwargs = {}
    for key in ("n_sequences", "frames_per_sequence", "orbit_radius_m", "orbit_height_m",
                "orbit_start_deg", "orbit_end_deg", "table_radius_m", "placement_clearance_m",
                "max_placement_attempts", "occlusion_margin_m", "occlusion_weight",
                "off_axis_weight", "failure_h_gain", "confidence_base", "confidence_gain",
                "confidence_noise_std", "confidence_saturation_power", "master_seed"):
        if key in doc:
            kwargs[key] = doc[key]
    if "objects_per_scene" in doc:
        kwargs["objects_per_scene"] = tuple(doc["objects_per_scene"])
    if "intrinsics" in doc:
        kwargs["intrinsics"] = _intrinsics_from_doc(doc["intrinsics"])
    return ScenarioConfig(objects=objects, estimators=estimators, **kwargs)


def _observation_doc(obs: EstimatorObservation) -> dict:
    doc = {"estimator_id": obs.estimator_id, "detected": obs.detected}
    if obs.detected:
        doc["pose"] = _pose_doc(obs.pose)
        doc["keypoints"] = {
            "points_2d": [_qlist(p) for p in obs.keypoints.points_2d],
            "visible": [bool(v) for v in obs.keypoints.visible],
        }
        doc["meta"] = {
            "confidence": _q9(obs.meta.confidence),
            "keypoint_sigma": _qlist(obs.meta.keypoint_sigma),
        }
    return doc


def _observation_from_doc(doc) -> EstimatorObservation:
    if not doc["detected"]:
        return EstimatorObservation(doc["estimator_id"], False)
    kp = doc["keypoints"]
    pts = np.array(kp["points_2d"], dtype=float)
    if pts.shape[0] != KEYPOINT_COUNT:
        raise ValueError(f"expected {KEYPOINT_COUNT} keypoints, got {pts.shape[0]}")
    keypoints = KeypointSet(pts, np.array(kp["visible"], dtype=bool))
    meta = DetectionMeta(doc["meta"]["confidence"],
                         np.array(doc["meta"]["keypoint_sigma"], dtype=float))
    return EstimatorObservation(doc["estimator_id"], True,
                                _pose_from_doc(doc["pose"]), keypoints, meta)


def record_to_doc(record: FrameRecord) -> dict:
    return {
        "sequence_id": record.sequence_id,
        "frame_index": record.frame_index,
        "object_id": record.object_id,
        "difficulty": _q9(record.difficulty),
        "ground_truth": _pose_doc(record.ground_truth),
        "observations": [_observation_doc(o) for o in record.observations],
    }


def record_from_doc(doc, intrinsics: CameraIntrinsics) -> FrameRecord:
    return FrameRecord(int(doc["sequence_id"]), int(doc["frame_index"]),
                       str(doc["object_id"]), intrinsics,
                       _pose_from_doc(doc["ground_truth"]), float(doc["difficulty"]),
                       tuple(_observation_from_doc(o) for o in doc["observations"]))


def _dumps(doc) -> str:
    return json.dumps(doc, separators=(",", ":"), allow_nan=False)


def write_dataset(path, config: ScenarioConfig, records) -> None:
    """Atomically write a header line plus one sorted record line per frame/object."""
    records = sorted(records, key=lambda r: (r.sequence_id, r.frame_index, r.object_id))
    header = {
        "format_version": FORMAT_VERSION,
        "scenario": config_to_doc(config),
        "estimator_ids": config.estimator_ids(),
        "object_ids": [o.object_id for o in config.objects],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(_dumps(header) + "\n")
        for rec in records:
            fh.write(_dumps(record_to_doc(rec)) + "\n")
    os.replace(tmp, path)


def read_dataset(path):
    """Parse a dataset file; returns (config, records)."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ValueError(f"{path}: empty dataset file")
        header = json.loads(header_line)
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version")
        config = config_from_doc(header["scenario"])
        known = set(config.estimator_ids())
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                rec = record_from_doc(doc, config.intrinsics)
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            for obs in rec.observations:
                if obs.estimator_id not in known:
                    raise ValueError(f"{path}: line {lineno}: unknown estimator "
                                     f"'{obs.estimator_id}'")
            records.append(rec)
    return config, records
