"""Scene/estimator simulator tests: determinism, noiseless limit, difficulty coupling."""

import numpy as np
import pytest

from poseuq.evaluate import spearman
from poseuq.geometry import add_distance, cuboid_point_cloud
from poseuq.rng import derive_rng
from poseuq.simulate import (DEFAULT_ESTIMATORS, DEFAULT_OBJECTS, EstimatorSpec,
                             ObjectSpec, ScenarioConfig, default_config,
                             generate_dataset, generate_sequence)


def tiny_config(**kwargs):
    base = dict(n_sequences=4, frames_per_sequence=10, objects=DEFAULT_OBJECTS,
                estimators=DEFAULT_ESTIMATORS, master_seed=7)
    base.update(kwargs)
    return ScenarioConfig(**base)


class TestSpecs:
    def test_object_radii(self):
        o = ObjectSpec("box", (0.06, 0.08, 0.24))
        assert o.bounding_radius() == pytest.approx(
            0.5 * np.linalg.norm([0.06, 0.08, 0.24]))
        assert o.footprint_radius() == pytest.approx(0.5 * np.linalg.norm([0.06, 0.08]))

    def test_object_rejects_bad_extents(self):
        with pytest.raises(ValueError, match="extents"):
            ObjectSpec("bad", (0.1, -0.1, 0.1))

    def test_estimator_rejects_bad_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            EstimatorSpec("e", 0.0, 1.0, 0.1)

    def test_config_rejects_empty_registry(self):
        with pytest.raises(ValueError, match="registry"):
            ScenarioConfig(objects=(), estimators=DEFAULT_ESTIMATORS)

    def test_config_rejects_single_estimator(self):
        with pytest.raises(ValueError, match="two estimators"):
            ScenarioConfig(objects=DEFAULT_OBJECTS,
                           estimators=DEFAULT_ESTIMATORS[:1])


class TestDeriveRng:
    def test_same_fields_same_stream(self):
        a = derive_rng(1, 2, "x").integers(0, 10 ** 9, size=4)
        b = derive_rng(1, 2, "x").integers(0, 10 ** 9, size=4)
        np.testing.assert_array_equal(a, b)

    def test_different_fields_different_streams(self):
        a = derive_rng(1, 2, "x").integers(0, 10 ** 9, size=4)
        b = derive_rng(1, 2, "y").integers(0, 10 ** 9, size=4)
        assert not np.array_equal(a, b)

    def test_field_order_matters(self):
        a = derive_rng(1, "a", "b").integers(0, 10 ** 9)
        b = derive_rng(1, "b", "a").integers(0, 10 ** 9)
        assert a != b


class TestGeneration:
    def test_deterministic(self):
        cfg = tiny_config()
        assert generate_dataset(cfg) == generate_dataset(cfg)

    def test_parallel_equals_serial(self):
        cfg = tiny_config()
        assert generate_dataset(cfg, workers=3) == generate_dataset(cfg, workers=1)

    def test_records_sorted_and_complete(self):
        cfg = tiny_config()
        records = generate_dataset(cfg)
        keys = [(r.sequence_id, r.frame_index, r.object_id) for r in records]
        assert keys == sorted(keys)
        lo, hi = cfg.objects_per_scene
        for seq in range(cfg.n_sequences):
            objs = {r.object_id for r in records if r.sequence_id == seq}
            assert lo <= len(objs) <= hi
            frames = {r.frame_index for r in records if r.sequence_id == seq}
            assert frames == set(range(cfg.frames_per_sequence))

    def test_every_record_carries_all_estimators(self):
        records = generate_dataset(tiny_config())
        ids = [e.estimator_id for e in DEFAULT_ESTIMATORS]
        for r in records:
            assert [o.estimator_id for o in r.observations] == ids

    def test_sequence_placements_differ(self):
        cfg = tiny_config()
        a = generate_sequence(cfg, 0)
        b = generate_sequence(cfg, 1)
        gt_a = {(r.object_id, tuple(np.round(r.ground_truth.trans, 6)))
                for r in a if r.frame_index == 0}
        gt_b = {(r.object_id, tuple(np.round(r.ground_truth.trans, 6)))
                for r in b if r.frame_index == 0}
        assert gt_a != gt_b


class TestNoiselessLimit:
    def test_recovered_pose_matches_ground_truth(self):
        # vanishing keypoint noise, no gross failures, no bias: the solved
        # pose must coincide with the ground truth
        ests = tuple(EstimatorSpec(e.estimator_id, 1e-9, 0.0, 0.0, 0.0, 0.0)
                     for e in DEFAULT_ESTIMATORS)
        cfg = tiny_config(estimators=ests, n_sequences=2)
        records = generate_dataset(cfg)
        checked = 0
        for r in records:
            cloud = cuboid_point_cloud(cfg.object_map()[r.object_id].extents_m,
                                       r.object_id)
            for obs in r.observations:
                if obs.detected:
                    assert add_distance(obs.pose, r.ground_truth, cloud) < 1e-6
                    checked += 1
        assert checked > 50


@pytest.fixture(scope="module")
def dataset():
    cfg = default_config(master_seed=31, n_sequences=12, frames_per_sequence=20)
    return cfg, generate_dataset(cfg)


class TestDifficultyCoupling:
    def test_difficulty_nonnegative(self, dataset):
        _, records = dataset
        assert all(r.difficulty >= 0.0 for r in records)

    def test_noise_grows_with_difficulty(self, dataset):
        cfg, records = dataset
        # reported sigma is an affine function of the difficulty latent
        est = cfg.estimators[0]
        for r in records:
            obs = r.observation(est.estimator_id)
            if obs.detected:
                expect = est.sigma0_px + est.sigma_h_px * r.difficulty
                assert obs.meta.keypoint_sigma[0] == pytest.approx(expect, rel=1e-9)

    def test_errors_correlate_across_estimators(self, dataset):
        # the shared difficulty latent couples estimator errors
        cfg, records = dataset
        ids = cfg.estimator_ids()
        errs = {e: [] for e in ids}
        for r in records:
            det = {o.estimator_id: o for o in r.observations if o.detected}
            if len(det) != len(ids):
                continue
            cloud = cuboid_point_cloud(cfg.object_map()[r.object_id].extents_m,
                                       r.object_id)
            for e in ids:
                errs[e].append(add_distance(det[e].pose, r.ground_truth, cloud))
        assert spearman(errs[ids[0]], errs[ids[1]]) > 0.3

    def test_high_difficulty_frames_have_larger_errors(self, dataset):
        cfg, records = dataset
        e0 = cfg.estimator_ids()[0]
        pairs = []
        for r in records:
            obs = r.observation(e0)
            if obs.detected:
                cloud = cuboid_point_cloud(cfg.object_map()[r.object_id].extents_m,
                                           r.object_id)
                pairs.append((r.difficulty, add_distance(obs.pose, r.ground_truth, cloud)))
        pairs.sort()
        n = len(pairs)
        easy = np.median([e for _, e in pairs[:n // 4]])
        hard = np.median([e for _, e in pairs[-n // 4:]])
        assert hard > easy

    def test_confidence_declines_with_difficulty(self, dataset):
        cfg, records = dataset
        e0 = cfg.estimator_ids()[0]
        hs, confs = [], []
        for r in records:
            obs = r.observation(e0)
            if obs.detected:
                hs.append(r.difficulty)
                confs.append(obs.meta.confidence)
        assert spearman(hs, confs) < -0.2
