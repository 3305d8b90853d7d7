"""Acceptance suite: one test per release criterion, each ending in a PASS line.

The correlation and selection criteria run on a frozen default scenario
(125 sequences x 45 frames, fixed master seed) and are therefore slow;
everything else is seconds.
"""

import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest
import scipy.stats

from poseuq.baselines import DetectionMeta, guapo_uq
from poseuq.camera import CameraIntrinsics, KeypointSet, project, solve_pnp
from poseuq.cli import main as cli_main
from poseuq.dataio import config_to_doc, read_dataset, write_dataset
from poseuq.ensemble import DisagreementMetric, EnsemblePrediction, \
    ensemble_disagreement, pair_disagreement
from poseuq.evaluate import add_auc, build_context, correlation_analysis, \
    selection_analysis, spearman, train_learned_metric, usable_frames
from poseuq.geometry import (Pose, add_distance, compose, cuboid_keypoint_model,
                             cuboid_point_cloud, quat_from_axis_angle,
                             rotation_angle, translation_distance)
from poseuq.learned import (LearnedMetricParams, TrainConfig, TrainingExample,
                            ensemble_output, init_params, loss, loss_gradients,
                            train)
from poseuq.simulate import default_config, generate_dataset

K600 = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
FROZEN_SEED = 20240601
ALTERNATE_SEEDS = (20240602, 20240603, 20240604)


def random_pose(rng, depth_range=(0.4, 2.0)):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose(quat_from_axis_angle(axis, rng.uniform(0, np.pi)),
                np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                          rng.uniform(*depth_range)]))


def ensemble_like(rng, K):
    """K nearby hypotheses for one object, as an estimator ensemble produces."""
    base = random_pose(rng)
    poses = []
    for _ in range(K):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        delta = Pose(quat_from_axis_angle(axis, np.radians(rng.uniform(0, 5.0))),
                     rng.normal(scale=0.02, size=3))
        poses.append(compose(delta, base))
    return tuple(poses)


def test_criterion_1_metric_oracles():
    """add_distance / rotation_angle / translation_distance / spearman / add_auc
    match independent oracles on 1000 random instances each."""
    t0 = time.time()
    rng = np.random.default_rng(1001)
    cloud = cuboid_point_cloud((0.08, 0.1, 0.12), "box")

    for _ in range(1000):
        a, b = random_pose(rng), random_pose(rng)
        # ADD: explicit per-point loop over the transformed clouds
        ref = np.mean([np.linalg.norm(a.apply(p[None, :])[0] - b.apply(p[None, :])[0])
                       for p in cloud.points])
        assert abs(add_distance(a, b, cloud) - ref) < 1e-9
        # rotation angle: from the trace of the relative rotation matrix
        Rrel = a.rotation_matrix().T @ b.rotation_matrix()
        ang = math.degrees(math.acos(np.clip((np.trace(Rrel) - 1.0) / 2.0, -1.0, 1.0)))
        assert abs(rotation_angle(a, b) - ang) < 1e-9
        # translation distance: plain Euclidean norm
        assert abs(translation_distance(a, b) - np.linalg.norm(a.trans - b.trans)) < 1e-9

    for _ in range(1000):
        n = int(rng.integers(5, 40))
        x = np.round(rng.normal(size=n), 1)  # rounding forces ties
        y = np.round(rng.normal(size=n), 1)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        ref = scipy.stats.spearmanr(x, y).statistic
        assert abs(spearman(x, y) - ref) < 1e-12
        errors = rng.uniform(0, 0.25, size=n)
        thr = 0.1
        ref_auc = np.mean([max(0.0, thr - e) for e in errors]) / thr
        assert abs(add_auc(errors, thr) - ref_auc) < 1e-12

    elapsed = time.time() - t0
    assert elapsed < 10.0
    print(f"criterion 1 PASS: 5 metrics x 1000 oracle instances in {elapsed:.1f}s")


def test_criterion_2_pnp_round_trip():
    """1000 noiseless projections recovered with ADD < 1e-6 m, 100% pass."""
    t0 = time.time()
    rng = np.random.default_rng(1002)
    cloud = cuboid_point_cloud((0.1, 0.1, 0.1), "cube")
    n_done = 0
    worst = 0.0
    while n_done < 1000:
        pose = random_pose(rng)
        ks = project(pose, cloud, K600)
        if ks.n_visible() < 6:
            continue
        rec = solve_pnp(cloud, ks, K600)
        err = add_distance(rec, pose, cloud)
        worst = max(worst, err)
        assert err < 1e-6
        n_done += 1
    elapsed = time.time() - t0
    assert elapsed < 30.0
    print(f"criterion 2 PASS: 1000/1000 round trips, worst ADD {worst:.2e} m, "
          f"{elapsed:.1f}s")


def test_criterion_3_gradient_check():
    """Analytic loss gradients match central differences on 20 random batches."""
    rng = np.random.default_rng(1003)
    eps = 1e-5
    checked = 0
    for batch in range(20):
        params = init_params(rng)
        K = int(rng.integers(2, 5))
        examples = [TrainingExample(ensemble_like(rng, K),
                                    float(rng.uniform(0, 0.2)))
                    for _ in range(int(rng.integers(2, 6)))]
        gw, gb = loss_gradients(params, examples)
        for layer in range(len(params.weights)):
            for _ in range(2):
                i = int(rng.integers(params.weights[layer].shape[0]))
                j = int(rng.integers(params.weights[layer].shape[1]))
                ws_hi = [w.copy() for w in params.weights]
                ws_lo = [w.copy() for w in params.weights]
                ws_hi[layer][i, j] += eps
                ws_lo[layer][i, j] -= eps
                num = (loss(LearnedMetricParams(tuple(ws_hi), params.biases), examples)
                       - loss(LearnedMetricParams(tuple(ws_lo), params.biases), examples)) \
                    / (2 * eps)
                assert abs(gw[layer][i, j] - num) <= 1e-4 * max(1e-8, abs(num))
                checked += 1
            i = int(rng.integers(params.biases[layer].shape[0]))
            bs_hi = [b.copy() for b in params.biases]
            bs_lo = [b.copy() for b in params.biases]
            bs_hi[layer][i] += eps
            bs_lo[layer][i] -= eps
            num = (loss(LearnedMetricParams(params.weights, tuple(bs_hi)), examples)
                   - loss(LearnedMetricParams(params.weights, tuple(bs_lo)), examples)) \
                / (2 * eps)
            assert abs(gb[layer][i] - num) <= 1e-4 * max(1e-8, abs(num))
            checked += 1
    print(f"criterion 3 PASS: {checked} coordinates across 20 batches match "
          "central differences")


def test_criterion_4_pair_average_equivalence():
    """Ensemble disagreement equals explicit pair enumeration for K in 2..5."""
    rng = np.random.default_rng(1004)
    cloud = cuboid_point_cloud((0.1, 0.08, 0.06), "box")
    for K in (2, 3, 4, 5):
        for _ in range(20):
            poses = tuple(random_pose(rng) for _ in range(K))
            pred = EnsemblePrediction(poses, tuple(str(i) for i in range(K)))
            for kind in ("translational", "rotational", "add"):
                metric = DisagreementMetric(kind, cloud=cloud)
                pairs = [pair_disagreement(metric, a, b)
                         for a, b in itertools.combinations(poses, 2)]
                got = ensemble_disagreement(metric, pred)
                assert abs(got - sum(pairs) / len(pairs)) < 1e-12
                if K == 2:
                    assert got == pairs[0]
    print("criterion 4 PASS: pair-average equivalence exact for K=2..5")


# ---------------------------------------------------------------------------
# Frozen-scenario machinery shared by criteria 5 and 6


@pytest.fixture(scope="module")
def frozen_dataset():
    config = default_config(master_seed=FROZEN_SEED)
    return config, generate_dataset(config, workers=8)


def _train_and_score(args):
    """Held-out Spearman rho of the learned metric, ADD disagreement, and
    confidence for one (object, estimator) pair."""
    config, records, object_id, estimator_id = args
    est_ids = config.estimator_ids()
    k = est_ids.index(estimator_id)
    cloud = cuboid_point_cloud(config.object_map()[object_id].extents_m, object_id)
    frames = {key: (poses, gt)
              for key, poses, gt in usable_frames(records, est_ids, object_id)}
    conf = {}
    for r in records:
        if r.object_id == object_id and (r.sequence_id, r.frame_index) in frames:
            conf[(r.sequence_id, r.frame_index)] = \
                1.0 - r.observation(estimator_id).meta.confidence
    params, _, held_keys = train_learned_metric(records, config, object_id,
                                                estimator_id)
    err, uq_learned, uq_add, uq_conf = [], [], [], []
    for key in held_keys:
        poses, gt = frames[key]
        err.append(add_distance(poses[k], gt, cloud))
        uq_learned.append(ensemble_output(params, poses))
        uq_add.append(np.mean([add_distance(a, b, cloud)
                               for a, b in itertools.combinations(poses, 2)]))
        uq_conf.append(conf[key])
    return (object_id, spearman(uq_learned, err), spearman(uq_add, err),
            spearman(uq_conf, err))


def _correlation_means(config, records):
    """Mean held-out Spearman rho over objects for learned / ADD / confidence."""
    jobs = [(config, records, o.object_id, e)
            for o in config.objects for e in config.estimator_ids()]
    with ProcessPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(_train_and_score, jobs))
    by_object = {}
    for obj, r_learned, r_add, r_conf in results:
        by_object.setdefault(obj, []).append((r_learned, r_add, r_conf))
    per_object = np.array([[np.mean([v[i] for v in vals]) for i in range(3)]
                           for vals in by_object.values()])
    return per_object.mean(axis=0)  # (learned, add, conf)


def test_criterion_5_correlation_ordering(frozen_dataset):
    """ADD disagreement beats the confidence baseline by a wide rank-correlation
    margin, and the learned metric lands within 0.05 of ADD disagreement;
    re-checked on 3 alternate seeds with at most one small miss allowed."""
    config, records = frozen_dataset
    t0 = time.time()
    mean_learned, mean_add, mean_conf = _correlation_means(config, records)
    elapsed = time.time() - t0
    assert mean_add >= mean_conf + 0.15
    assert mean_add >= 0.45
    assert mean_learned >= mean_add - 0.05
    assert elapsed < 300.0

    misses = []
    for seed in ALTERNATE_SEEDS:
        alt_config = default_config(master_seed=seed)
        alt_records = generate_dataset(alt_config, workers=8)
        m_learned, m_add, m_conf = _correlation_means(alt_config, alt_records)
        gap = min(m_add - (m_conf + 0.15), m_add - 0.45,
                  m_learned - (m_add - 0.05))
        if gap < 0:
            misses.append((seed, gap))
    assert len(misses) <= 1, f"alternate-seed misses: {misses}"
    if misses:
        assert misses[0][1] >= -0.05, f"alternate-seed miss too large: {misses}"
    print(f"criterion 5 PASS: frozen mean rho learned={mean_learned:.3f} "
          f"add={mean_add:.3f} confidence={mean_conf:.3f} ({elapsed:.0f}s); "
          f"alternate-seed misses: {misses or 'none'}")


def test_criterion_6_view_selection(frozen_dataset):
    """Uncertainty-guided view selection with ADD disagreement beats the random
    and confidence baselines; the oracle lower-bounds everything."""
    config, records = frozen_dataset
    t0 = time.time()
    ctx = build_context(config)
    report = selection_analysis(records, ["confidence", "d_add"], ctx)

    def method_mean(method):
        vals = [a.mean_error_m for a in report.aggregates if a.method == method]
        return float(np.mean(vals))

    m_add = method_mean("d_add")
    m_conf = method_mean("confidence")
    m_random = method_mean("random")
    by_group = {}
    for row in report.rows:
        by_group.setdefault((row.object_id, row.sequence_id, row.estimator_id),
                            {})[row.method] = row.add_error_m
    for group in by_group.values():
        for method, err in group.items():
            assert group["oracle"] <= err
    elapsed = time.time() - t0
    assert m_add <= 0.75 * m_random
    assert m_add <= 0.85 * m_conf
    assert elapsed < 120.0
    print(f"criterion 6 PASS: selected-frame ADD {100 * m_add:.2f} cm vs random "
          f"{100 * m_random:.2f} cm / confidence {100 * m_conf:.2f} cm "
          f"({elapsed:.0f}s)")


def test_criterion_7_guapo_behavior():
    """Doubling keypoint sigmas strictly increases mean resampling uncertainty;
    vanishing sigmas give vanishing uncertainty."""
    rng = np.random.default_rng(1007)
    model = cuboid_keypoint_model((0.1, 0.1, 0.1), "cube")
    frames = []
    while len(frames) < 200:
        pose = random_pose(rng, depth_range=(0.6, 1.4))
        ks = project(pose, model, K600)
        if ks.n_visible() == len(model):
            frames.append(ks)
    lo, hi = [], []
    for i, ks in enumerate(frames):
        meta1 = DetectionMeta(0.9, np.full(len(model), 1.0))
        meta2 = DetectionMeta(0.9, np.full(len(model), 2.0))
        lo.append(guapo_uq(ks, meta1, model, K600, T=20, seed=i))
        hi.append(guapo_uq(ks, meta2, model, K600, T=20, seed=i))
        tiny = guapo_uq(ks, DetectionMeta(0.9, np.full(len(model), 1e-9)),
                        model, K600, T=5, seed=i)
        assert tiny < 1e-6
    assert np.mean(hi) > np.mean(lo)
    print(f"criterion 7 PASS: mean uncertainty {np.mean(lo):.4f} -> "
          f"{np.mean(hi):.4f} m under x2 sigma; 1e-9 px sigmas stay < 1e-6 m")


def test_criterion_8_cli_determinism(tmp_path):
    """Every CLI command is byte-identical on rerun; parallel generation equals
    serial generation."""
    config = default_config(master_seed=41, n_sequences=4, frames_per_sequence=10)
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(json.dumps(config_to_doc(config)))

    outs = [tmp_path / "d1.jsonl", tmp_path / "d2.jsonl", tmp_path / "d3.jsonl"]
    assert cli_main(["gen", "--config", str(cfg_path), "--out", str(outs[0])]) == 0
    assert cli_main(["gen", "--config", str(cfg_path), "--out", str(outs[1])]) == 0
    assert cli_main(["gen", "--config", str(cfg_path), "--out", str(outs[2]),
                     "--workers", "3"]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes() == outs[2].read_bytes()

    data = str(outs[0])
    dcfg, records = read_dataset(data)
    est_ids = set(dcfg.estimator_ids())
    counts = {}
    for r in records:
        if {o.estimator_id for o in r.observations if o.detected} == est_ids:
            counts[r.object_id] = counts.get(r.object_id, 0) + 1
    obj = max(counts, key=counts.get)

    t_args = ["train-metric", "--data", data, "--object", obj,
              "--estimator", dcfg.estimator_ids()[0], "--epochs", "3"]
    assert cli_main(t_args + ["--out", str(tmp_path / "p1.json")]) == 0
    assert cli_main(t_args + ["--out", str(tmp_path / "p2.json")]) == 0
    assert (tmp_path / "p1.json").read_bytes() == (tmp_path / "p2.json").read_bytes()

    e_args = ["eval-corr", "--data", data, "--methods", "confidence,d_add",
              "--learned-params", str(tmp_path / "p1.json")]
    assert cli_main(e_args + ["--out", str(tmp_path / "c1")]) == 0
    assert cli_main(e_args + ["--out", str(tmp_path / "c2")]) == 0
    for ext in (".json", ".txt"):
        assert (tmp_path / f"c1{ext}").read_bytes() == \
            (tmp_path / f"c2{ext}").read_bytes()

    s_args = ["select-view", "--data", data, "--method", "d_add"]
    assert cli_main(s_args + ["--out", str(tmp_path / "s1")]) == 0
    assert cli_main(s_args + ["--out", str(tmp_path / "s2")]) == 0
    for ext in (".json", ".txt"):
        assert (tmp_path / f"s1{ext}").read_bytes() == \
            (tmp_path / f"s2{ext}").read_bytes()
    print("criterion 8 PASS: gen/train-metric/eval-corr/select-view reruns "
          "byte-identical; parallel == serial")


def test_criterion_9_zero_target_loss():
    """Zero targets with a zero network give exactly zero loss; training never
    ends worse than it starts."""
    rng = np.random.default_rng(1009)
    examples = []
    for _ in range(12):
        gt, other = ensemble_like(rng, 2)
        examples.append(TrainingExample((gt, other), 0.0))  # estimator k == gt
    zero = LearnedMetricParams.zeros()
    assert loss(zero, examples) == 0.0

    cfg = TrainConfig(epochs=20, seed=2)
    initial = loss(init_params(np.random.default_rng(cfg.seed)), examples)
    final = loss(train(examples, cfg), examples)
    assert final <= initial
    print("criterion 9 PASS: zero-target loss exactly 0.0 with a zero network; "
          f"training loss {initial:.4g} -> {final:.4g}")
