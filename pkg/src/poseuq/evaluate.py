"""Measurement layer: rank correlation between uncertainty and true error,
ADD-threshold AUC, and uncertainty-guided camera-view selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .baselines import confidence_uq, guapo_uq
from .ensemble import DisagreementMetric, EnsemblePrediction, ensemble_disagreement
from .geometry import PointCloud, add_distance, cuboid_point_cloud, cuboid_keypoint_model
from .learned import TrainConfig, TrainingExample, ensemble_output, train
from .rng import derive_rng

METHODS = ("confidence", "guapo", "d_translational", "d_rotational", "d_add", "d_learned")
MIN_FRAMES_PER_OBJECT = 5


def spearman(a, b) -> float:
    """Spearman rank correlation with tie-averaged ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("inputs must be equal-length 1-D sequences of length >= 2")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    sa = ra - ra.mean()
    sb = rb - rb.mean()
    va = float(sa @ sa)
    vb = float(sb @ sb)
    if va == 0.0 or vb == 0.0:
        raise ValueError("zero rank variance")
    return float((sa @ sb) / math.sqrt(va * vb))


def add_auc(errors, threshold: float = 0.10) -> float:
    """Exact area under the accuracy-vs-ADD-threshold step curve on [0, threshold].

    Infinite errors (undetected frames) contribute zero accuracy everywhere.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    errors = list(errors)
    if not errors:
        raise ValueError("empty error sequence")
    total = 0.0
    for e in errors:
        if not math.isinf(e) and e < threshold:
            total += threshold - e
    return total / (len(errors) * threshold)


def select_view(uq_values, frame_indices=None) -> int:
    """Frame index with the smallest uncertainty; ties go to the lowest index."""
    vals = list(uq_values)
    if frame_indices is None:
        frame_indices = list(range(len(vals)))
    else:
        frame_indices = list(frame_indices)
    usable = [(v, f) for v, f in zip(vals, frame_indices) if v is not None]
    if not usable:
        raise ValueError("no usable frame")
    best_v = min(v for v, _ in usable)
    return min(f for v, f in usable if v == best_v)


@dataclass
class UQContext:
    """Everything needed to turn a frame record into per-estimator UQ values."""

    estimator_ids: list
    clouds: dict                      # object_id -> PointCloud (ADD cloud)
    keypoint_models: dict             # object_id -> PointCloud (9-point PnP model)
    learned_params: dict = field(default_factory=dict)   # (object_id, estimator_id) -> params
    guapo_samples: int = 50
    guapo_aggregate: str = "rms_add"
    guapo_seed: int = 0


def frame_uq(record, method: str, ctx: UQContext) -> dict:
    """Per-estimator UQ values for one frame; None where undefined."""
    if method not in METHODS:
        raise ValueError(f"unknown method: {method!r}")
    det = {o.estimator_id: o for o in record.observations if o.detected}
    out = {e: None for e in ctx.estimator_ids}
    if method == "confidence":
        for e, obs in det.items():
            out[e] = confidence_uq(obs.meta)
        return out
    if method == "guapo":
        for e, obs in det.items():
            rng = derive_rng(ctx.guapo_seed, record.sequence_id, record.frame_index,
                             record.object_id, e, "guapo")
            seed = int(rng.integers(0, 2 ** 62))
            try:
                out[e] = guapo_uq(obs.keypoints, obs.meta,
                                  ctx.keypoint_models[record.object_id],
                                  record.intrinsics, T=ctx.guapo_samples, seed=seed,
                                  aggregate=ctx.guapo_aggregate,
                                  cloud=ctx.clouds[record.object_id])
            except (ValueError, RuntimeError):
                out[e] = None
        return out
    # Ensemble methods need every estimator's pose for the frame.
    if len(det) != len(ctx.estimator_ids):
        return out
    poses = tuple(det[e].pose for e in ctx.estimator_ids)
    pred = EnsemblePrediction(poses, tuple(ctx.estimator_ids))
    if method == "d_translational":
        v = ensemble_disagreement(DisagreementMetric("translational"), pred)
        return {e: v for e in ctx.estimator_ids}
    if method == "d_rotational":
        v = ensemble_disagreement(DisagreementMetric("rotational"), pred)
        return {e: v for e in ctx.estimator_ids}
    if method == "d_add":
        v = ensemble_disagreement(DisagreementMetric("add", cloud=ctx.clouds[record.object_id]), pred)
        return {e: v for e in ctx.estimator_ids}
    if method == "d_learned":
        for e in ctx.estimator_ids:
            params = ctx.learned_params.get((record.object_id, e))
            if params is not None:
                out[e] = ensemble_output(params, poses)
        return out
    raise ValueError(f"unknown method: {method!r}")


def frame_errors(record, ctx: UQContext) -> dict:
    """Per-estimator ADD error to ground truth; +inf when undetected."""
    cloud = ctx.clouds[record.object_id]
    out = {}
    for e in ctx.estimator_ids:
        obs = record.observation(e)
        out[e] = add_distance(obs.pose, record.ground_truth, cloud) if obs.detected else math.inf
    return out


@dataclass(frozen=True)
class CorrelationRow:
    object_id: str
    estimator_id: str
    method: str
    rho: float
    n_frames: int


@dataclass(frozen=True)
class CorrelationAggregate:
    estimator_id: str
    method: str
    mean_rho: float
    std_rho: float
    n_objects: int


@dataclass
class CorrelationReport:
    rows: list
    aggregates: list
    warnings: list


def correlation_analysis(records, methods, ctx: UQContext,
                         exclude_frames: dict | None = None) -> CorrelationReport:
    """Spearman correlation of UQ against ADD error, per object and estimator.

    exclude_frames optionally maps (object_id, estimator_id, method) to a set
    of (sequence_id, frame_index) pairs to drop, used to keep learned-metric
    training frames out of its own evaluation.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method: {m!r}")
    exclude_frames = exclude_frames or {}
    by_object: dict = {}
    for r in records:
        by_object.setdefault(r.object_id, []).append(r)

    rows, warnings = [], []
    for obj in sorted(by_object):
        obj_records = by_object[obj]
        for method in methods:
            uq_per_frame = [frame_uq(r, method, ctx) for r in obj_records]
            err_per_frame = [frame_errors(r, ctx) for r in obj_records]
            for e in ctx.estimator_ids:
                skip = exclude_frames.get((obj, e, method), ())
                uq_vals, err_vals = [], []
                for r, uqs, errs in zip(obj_records, uq_per_frame, err_per_frame):
                    if (r.sequence_id, r.frame_index) in skip:
                        continue
                    if uqs[e] is None or math.isinf(errs[e]):
                        continue
                    uq_vals.append(uqs[e])
                    err_vals.append(errs[e])
                if len(uq_vals) < MIN_FRAMES_PER_OBJECT:
                    warnings.append(f"{obj}/{e}/{method}: only {len(uq_vals)} usable frames, excluded")
                    continue
                try:
                    rho = spearman(uq_vals, err_vals)
                except ValueError as exc:
                    warnings.append(f"{obj}/{e}/{method}: {exc}, excluded")
                    continue
                rows.append(CorrelationRow(obj, e, method, rho, len(uq_vals)))

    aggregates = []
    for method in methods:
        for e in ctx.estimator_ids:
            rhos = [r.rho for r in rows if r.method == method and r.estimator_id == e]
            if rhos:
                aggregates.append(CorrelationAggregate(
                    e, method, float(np.mean(rhos)), float(np.std(rhos)), len(rhos)))
    return CorrelationReport(rows, aggregates, warnings)


@dataclass(frozen=True)
class SelectionRow:
    object_id: str
    sequence_id: int
    estimator_id: str
    method: str
    frame_index: int
    add_error_m: float


@dataclass(frozen=True)
class SelectionAggregate:
    estimator_id: str
    method: str
    mean_error_m: float
    std_error_m: float
    n_objects: int


@dataclass
class SelectionReport:
    rows: list
    aggregates: list
    warnings: list


def selection_analysis(records, methods, ctx: UQContext, random_seed: int = 0) -> SelectionReport:
    """Greedy lowest-UQ frame selection per (object, sequence, estimator).

    Always adds the ground-truth oracle and a seeded uniform-random reference.
    Candidate frames are those where the estimator produced a pose; frames
    with undefined UQ rank as infinitely uncertain.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method: {m!r}")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.object_id, r.sequence_id), []).append(r)

    rows, warnings = [], []
    all_methods = list(methods) + ["oracle", "random"]
    for (obj, seq) in sorted(groups):
        frames = sorted(groups[(obj, seq)], key=lambda r: r.frame_index)
        errs = [frame_errors(r, ctx) for r in frames]
        uq_cache = {m: [frame_uq(r, m, ctx) for r in frames] for m in methods}
        for e in ctx.estimator_ids:
            candidates = [i for i, er in enumerate(errs) if not math.isinf(er[e])]
            if not candidates:
                warnings.append(f"{obj}/seq{seq}/{e}: no detected frame, skipped")
                continue
            for method in all_methods:
                if method == "oracle":
                    vals = [errs[i][e] for i in candidates]
                elif method == "random":
                    rng = derive_rng(random_seed, obj, seq, e, "random-select")
                    pick = candidates[int(rng.integers(0, len(candidates)))]
                    vals = [0.0 if i == pick else 1.0 for i in candidates]
                else:
                    vals = [uq_cache[method][i][e] for i in candidates]
                    vals = [math.inf if v is None else v for v in vals]
                sel = select_view(vals, [frames[i].frame_index for i in candidates])
                sel_pos = next(i for i in candidates if frames[i].frame_index == sel)
                rows.append(SelectionRow(obj, seq, e, method, sel, errs[sel_pos][e]))

    aggregates = []
    for method in all_methods:
        for e in ctx.estimator_ids:
            per_object = {}
            for r in rows:
                if r.method == method and r.estimator_id == e:
                    per_object.setdefault(r.object_id, []).append(r.add_error_m)
            if per_object:
                means = [float(np.mean(v)) for _, v in sorted(per_object.items())]
                aggregates.append(SelectionAggregate(
                    e, method, float(np.mean(means)), float(np.std(means)), len(means)))
    return SelectionReport(rows, aggregates, warnings)


def usable_frames(records, estimator_ids, object_id):
    """Frames of one object where every estimator produced a pose.

    Returns ((sequence_id, frame_index), poses-in-estimator-order, ground_truth)
    tuples; only these frames admit ensemble disagreement and learned training.
    """
    out = []
    for r in records:
        if r.object_id != object_id:
            continue
        det = {o.estimator_id: o for o in r.observations if o.detected}
        if len(det) == len(estimator_ids):
            poses = tuple(det[e].pose for e in estimator_ids)
            out.append(((r.sequence_id, r.frame_index), poses, r.ground_truth))
    return out


def train_learned_metric(records, config, object_id: str, estimator_id: str,
                         split: float = 1.0 / 3.0,
                         train_config: TrainConfig | None = None):
    """Train the pair regressor for one (object, estimator) on a dataset split.

    The split is a seeded shuffle (seed taken from the training config); the
    same seed reproduces the same partition, so evaluation can exclude exactly
    the training frames. Returns (params, train_keys, held_keys).
    """
    est_ids = config.estimator_ids()
    if estimator_id not in est_ids:
        raise ValueError(f"unknown estimator '{estimator_id}'")
    k = est_ids.index(estimator_id)
    spec = config.object_map().get(object_id)
    if spec is None:
        raise ValueError(f"unknown object '{object_id}'")
    cloud = cuboid_point_cloud(spec.extents_m, object_id)
    usable = usable_frames(records, est_ids, object_id)
    if len(usable) < 6:
        raise ValueError(f"object '{object_id}' has only {len(usable)} usable frames; "
                         "need at least 6")
    tc = train_config or TrainConfig()
    rng = np.random.default_rng(tc.seed)
    order = rng.permutation(len(usable))
    n_train = max(2, int(round(split * len(usable))))
    train_idx = sorted(int(i) for i in order[:n_train])
    examples = [TrainingExample(usable[i][1],
                                add_distance(usable[i][1][k], usable[i][2], cloud))
                for i in train_idx]
    params = train(examples, tc, k, object_id)
    train_keys = [usable[i][0] for i in train_idx]
    held_keys = [usable[int(i)][0] for i in order[n_train:]]
    return params, train_keys, held_keys


def build_context(config, learned_params: dict | None = None, **kwargs) -> UQContext:
    """UQContext from a scenario config's object and estimator registries."""
    clouds = {o.object_id: cuboid_point_cloud(o.extents_m, o.object_id) for o in config.objects}
    models = {o.object_id: cuboid_keypoint_model(o.extents_m, o.object_id) for o in config.objects}
    return UQContext(config.estimator_ids(), clouds, models,
                     learned_params or {}, **kwargs)
