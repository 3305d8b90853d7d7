"""Deterministic multi-view scene and estimator simulator.

Sequences place a few cuboid objects on a virtual table and orbit a camera
around them. Each simulated estimator perturbs the projected keypoints with
noise whose magnitude grows with a shared per-frame difficulty latent, then
re-solves PnP, so the errors of different estimators are coupled exactly the
way a shared hard input couples real models.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .baselines import DetectionMeta
from .camera import CameraIntrinsics, KeypointSet, project, solve_pnp
from .geometry import Pose, compose, cuboid_keypoint_model, quat_from_axis_angle
from .rng import derive_rng


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    extents_m: tuple

    def __post_init__(self):
        ext = tuple(float(v) for v in self.extents_m)
        if len(ext) != 3 or any(v <= 0 for v in ext):
            raise ValueError(f"object {self.object_id}: extents must be 3 positive values")
        object.__setattr__(self, "extents_m", ext)

    def bounding_radius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.extents_m))

    def footprint_radius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.extents_m[:2]))


@dataclass(frozen=True)
class EstimatorSpec:
    estimator_id: str
    sigma0_px: float
    sigma_h_px: float
    gross_failure_base_prob: float
    bias_rotation_deg: float = 0.0
    bias_translation_m: float = 0.0

    def __post_init__(self):
        if self.sigma0_px <= 0 or self.sigma_h_px < 0:
            raise ValueError(f"estimator {self.estimator_id}: sigmas must be positive")
        if not (0.0 <= self.gross_failure_base_prob <= 1.0):
            raise ValueError(f"estimator {self.estimator_id}: failure prob must be in [0, 1]")


@dataclass(frozen=True)
class ScenarioConfig:
    n_sequences: int = 125
    frames_per_sequence: int = 45
    objects_per_scene: tuple = (3, 6)
    objects: tuple = ()
    estimators: tuple = ()
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480))
    orbit_radius_m: float = 0.9
    orbit_height_m: float = 0.45
    orbit_start_deg: float = 0.0
    orbit_end_deg: float = 180.0
    table_radius_m: float = 0.32
    placement_clearance_m: float = 0.01
    max_placement_attempts: int = 1000
    occlusion_margin_m: float = 0.02
    occlusion_weight: float = 1.0
    off_axis_weight: float = 0.35
    failure_h_gain: float = 4.0
    confidence_base: float = 0.95
    confidence_gain: float = 0.55
    confidence_noise_std: float = 0.22
    confidence_saturation_power: float = 0.35
    master_seed: int = 0

    def __post_init__(self):
        if self.n_sequences < 1 or self.frames_per_sequence < 1:
            raise ValueError("sequence counts must be positive")
        lo, hi = self.objects_per_scene
        if not (1 <= lo <= hi):
            raise ValueError("objects_per_scene must be an increasing positive pair")
        if len(self.objects) == 0:
            raise ValueError("object registry is empty")
        if hi > len(self.objects):
            raise ValueError("objects_per_scene exceeds registry size")
        if len(self.estimators) < 2:
            raise ValueError("need at least two estimators")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "objects_per_scene", (int(lo), int(hi)))

    def object_map(self) -> dict:
        return {o.object_id: o for o in self.objects}

    def estimator_ids(self) -> list:
        return [e.estimator_id for e in self.estimators]


@dataclass(frozen=True)
class EstimatorObservation:
    estimator_id: str
    detected: bool
    pose: Pose | None = None
    keypoints: KeypointSet | None = None
    meta: DetectionMeta | None = None

    def __post_init__(self):
        if self.detected and (self.pose is None or self.keypoints is None or self.meta is None):
            raise ValueError("detected observation missing payload")
        if not self.detected and self.pose is not None:
            raise ValueError("undetected observation must not carry a pose")


@dataclass(frozen=True)
class FrameRecord:
    """One (sequence, frame, object) observation with all estimator outputs."""

    sequence_id: int
    frame_index: int
    object_id: str
    intrinsics: CameraIntrinsics
    ground_truth: Pose
    difficulty: float
    observations: tuple

    def observation(self, estimator_id: str) -> EstimatorObservation:
        for obs in self.observations:
            if obs.estimator_id == estimator_id:
                return obs
        raise KeyError(estimator_id)


def _camera_pose_world(config: ScenarioConfig, frame_index: int) -> Pose:
    """World-from-camera pose for one orbit step (x right, y down, z forward)."""
    n = config.frames_per_sequence
    if n == 1:
        theta = np.radians(config.orbit_start_deg)
    else:
        span = config.orbit_end_deg - config.orbit_start_deg
        theta = np.radians(config.orbit_start_deg + span * frame_index / (n - 1))
    C = np.array([config.orbit_radius_m * np.cos(theta),
                  config.orbit_radius_m * np.sin(theta),
                  config.orbit_height_m])
    target = np.zeros(3)
    fwd = target - C
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(fwd, up)
    x = x / np.linalg.norm(x)
    y = np.cross(fwd, x)
    R_wc = np.column_stack([x, y, fwd])
    return Pose.from_rotation_translation(R_wc, C)


def _place_objects(config: ScenarioConfig, sequence_id: int):
    """Pick the object subset and collision-free table placements for a sequence."""
    rng = derive_rng(config.master_seed, sequence_id, "placement")
    lo, hi = config.objects_per_scene
    n_obj = int(rng.integers(lo, hi + 1))
    chosen = rng.choice(len(config.objects), size=n_obj, replace=False)
    placements = []
    for idx in sorted(int(i) for i in chosen):
        spec = config.objects[idx]
        fr = spec.footprint_radius()
        for attempt in range(config.max_placement_attempts + 1):
            if attempt == config.max_placement_attempts:
                raise RuntimeError(f"sequence {sequence_id}: no collision-free placement found")
            rad = config.table_radius_m * np.sqrt(rng.uniform())
            ang = rng.uniform(0.0, 2.0 * np.pi)
            pos = np.array([rad * np.cos(ang), rad * np.sin(ang), spec.extents_m[2] / 2.0])
            ok = all(np.linalg.norm(pos[:2] - p[:2]) >
                     fr + o.footprint_radius() + config.placement_clearance_m
                     for o, p, _rr, _ in placements)
            if ok:
                break
        yaw = rng.uniform(0.0, 2.0 * np.pi)
        placements.append((spec, pos, spec.bounding_radius(), yaw))
    return placements


def _difficulty(config: ScenarioConfig, cam_world: Pose, spec, world_pose: Pose,
                placements) -> float:
    """Occlusion proxy plus off-axis viewing term; shared across estimators."""
    model = cuboid_keypoint_model(spec.extents_m, spec.object_id)
    C = cam_world.trans
    kps_world = world_pose.apply(model.points)
    rays = kps_world - C
    ray_len = np.linalg.norm(rays, axis=1)
    occluded = np.zeros(len(model), dtype=bool)
    for other_spec, other_pos, other_r, _ in placements:
        if other_spec.object_id == spec.object_id:
            continue
        rel = other_pos - C
        t_par = (rays @ rel) / (ray_len ** 2)
        closest = C[None, :] + t_par[:, None] * rays
        dist = np.linalg.norm(closest - other_pos, axis=1)
        blocking = (t_par > 0) & (t_par < 1.0) & \
            (dist < other_r + config.occlusion_margin_m)
        occluded |= blocking
    occ = occluded.mean()
    boresight = -C / np.linalg.norm(C)
    to_obj = world_pose.trans - C
    to_obj = to_obj / np.linalg.norm(to_obj)
    off_axis = float(np.arccos(np.clip(boresight @ to_obj, -1.0, 1.0)))
    return float(config.occlusion_weight * occ +
                 config.off_axis_weight * off_axis / (np.pi / 4.0))


def _random_unit_vector(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _bias_pose(config: ScenarioConfig, est: EstimatorSpec) -> Pose:
    """Fixed per-estimator systematic offset, applied in the object frame."""
    rng = derive_rng(config.master_seed, est.estimator_id, "bias")
    axis = _random_unit_vector(rng)
    direction = _random_unit_vector(rng)
    return Pose(quat_from_axis_angle(axis, np.radians(est.bias_rotation_deg)),
                direction * est.bias_translation_m)


def generate_sequence(config: ScenarioConfig, sequence_id: int) -> list:
    """All frame records of one sequence, sorted by (frame_index, object_id)."""
    placements = _place_objects(config, sequence_id)
    Kc = config.intrinsics
    bias = {e.estimator_id: _bias_pose(config, e) for e in config.estimators}
    records = []
    for frame_index in range(config.frames_per_sequence):
        cam_world = _camera_pose_world(config, frame_index)
        world_cam = _pose_inverse(cam_world)
        for spec, pos, _r, yaw in placements:
            world_obj = Pose(quat_from_axis_angle((0.0, 0.0, 1.0), yaw), pos)
            gt = compose(world_cam, world_obj)
            model = cuboid_keypoint_model(spec.extents_m, spec.object_id)
            h = _difficulty(config, cam_world, spec, world_obj, placements)
            observations = []
            for est in config.estimators:
                obs = _simulate_estimator(config, sequence_id, frame_index, spec, est,
                                          gt, bias[est.estimator_id], model, Kc, h)
                observations.append(obs)
            records.append(FrameRecord(sequence_id, frame_index, spec.object_id,
                                       Kc, gt, h, tuple(observations)))
    records.sort(key=lambda r: (r.frame_index, r.object_id))
    return records


def _pose_inverse(p: Pose) -> Pose:
    from .geometry import inverse
    return inverse(p)


def _simulate_estimator(config, sequence_id, frame_index, spec, est, gt, bias_pose,
                        model, Kc, h) -> EstimatorObservation:
    rng_fail = derive_rng(config.master_seed, sequence_id, frame_index,
                          spec.object_id, est.estimator_id, "failure")
    rng_noise = derive_rng(config.master_seed, sequence_id, frame_index,
                           spec.object_id, est.estimator_id, "noise")
    rng_conf = derive_rng(config.master_seed, sequence_id, frame_index,
                          spec.object_id, est.estimator_id, "confidence")

    p_fail = min(1.0, est.gross_failure_base_prob * (1.0 + config.failure_h_gain * h))
    if rng_fail.uniform() < p_fail:
        # Gross failure: a wildly wrong hypothesis stands in for a flipped or
        # hallucinated detection.
        axis = _random_unit_vector(rng_fail)
        angle = rng_fail.uniform(0.0, np.pi)
        offset = _random_unit_vector(rng_fail) * rng_fail.uniform(0.0, 2.0 * spec.bounding_radius())
        source = compose(gt, Pose(quat_from_axis_angle(axis, angle), offset))
    else:
        source = compose(gt, bias_pose)

    sigma = est.sigma0_px + est.sigma_h_px * h
    try:
        clean = project(source, model, Kc)
    except ValueError:
        return EstimatorObservation(est.estimator_id, False)
    noisy_pts = clean.points_2d + rng_noise.normal(size=(len(model), 2)) * sigma
    inside = (noisy_pts[:, 0] >= 0) & (noisy_pts[:, 0] <= Kc.width) & \
             (noisy_pts[:, 1] >= 0) & (noisy_pts[:, 1] <= Kc.height)
    keypoints = KeypointSet(noisy_pts, clean.visible & inside)
    if keypoints.n_visible() < 6:
        return EstimatorObservation(est.estimator_id, False)
    try:
        pose = solve_pnp(model, keypoints, Kc)
    except ValueError:
        return EstimatorObservation(est.estimator_id, False)

    conf = config.confidence_base - config.confidence_gain * h + \
        rng_conf.normal(0.0, config.confidence_noise_std)
    conf = float(np.clip(conf, 0.01, 1.0) ** config.confidence_saturation_power)
    meta = DetectionMeta(conf, np.full(len(model), sigma))
    return EstimatorObservation(est.estimator_id, True, pose, keypoints, meta)


def generate_dataset(config: ScenarioConfig, workers: int = 1) -> list:
    """All records, sorted by (sequence_id, frame_index, object_id).

    The per-tuple RNG derivation makes parallel and serial generation
    byte-identical.
    """
    seq_ids = list(range(config.n_sequences))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_gen_seq_star, [(config, s) for s in seq_ids]))
    else:
        chunks = [generate_sequence(config, s) for s in seq_ids]
    records = []
    for chunk in chunks:
        records.extend(chunk)
    records.sort(key=lambda r: (r.sequence_id, r.frame_index, r.object_id))
    return records


def _gen_seq_star(args):
    return generate_sequence(*args)


DEFAULT_OBJECTS = (
    ObjectSpec("bbq_sauce", (0.055, 0.035, 0.175)),
    ObjectSpec("butter", (0.12, 0.065, 0.035)),
    ObjectSpec("cookies", (0.165, 0.035, 0.21)),
    ObjectSpec("ketchup", (0.06, 0.04, 0.17)),
    ObjectSpec("mac_cheese", (0.165, 0.045, 0.12)),
    ObjectSpec("milk", (0.07, 0.07, 0.19)),
)

DEFAULT_ESTIMATORS = (
    EstimatorSpec("dope_nd", 1.3, 7.0, 0.030, 2.0, 0.005),
    EstimatorSpec("dope_nd_full", 1.0, 6.0, 0.025, 1.5, 0.004),
    EstimatorSpec("dope_vs", 0.8, 4.5, 0.020, 1.0, 0.003),
)


def default_config(master_seed: int = 20240601, n_sequences: int = 125,
                   frames_per_sequence: int = 45) -> ScenarioConfig:
    return ScenarioConfig(n_sequences=n_sequences,
                          frames_per_sequence=frames_per_sequence,
                          objects=DEFAULT_OBJECTS,
                          estimators=DEFAULT_ESTIMATORS,
                          master_seed=master_seed)
