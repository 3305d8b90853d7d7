"""JSON-Lines dataset serialization tests."""

import json

import numpy as np
import pytest

from poseuq.dataio import (config_from_doc, config_to_doc, read_dataset,
                           write_dataset, _q9)
from poseuq.simulate import default_config, generate_dataset


@pytest.fixture(scope="module")
def small():
    config = default_config(master_seed=5, n_sequences=3, frames_per_sequence=8)
    return config, generate_dataset(config)


class TestQuantization:
    def test_idempotent(self):
        rng = np.random.default_rng(0)
        for x in rng.normal(scale=10.0, size=200):
            q = _q9(x)
            assert _q9(q) == q

    def test_round_trip_through_json(self):
        rng = np.random.default_rng(1)
        for x in rng.normal(size=100):
            q = _q9(x)
            assert json.loads(json.dumps(q)) == q


class TestConfigDoc:
    def test_round_trip(self):
        config = default_config(master_seed=77)
        doc = config_to_doc(config)
        back = config_from_doc(doc)
        assert back == config

    def test_missing_field_error_names_field(self):
        doc = config_to_doc(default_config())
        del doc["objects"]
        with pytest.raises(ValueError, match="missing field 'objects'"):
            config_from_doc(doc)

    def test_doc_is_json_serializable(self):
        json.dumps(config_to_doc(default_config()))


class TestDatasetFile:
    def test_write_read_round_trip(self, small, tmp_path):
        config, records = small
        path = tmp_path / "data.jsonl"
        write_dataset(path, config, records)
        config2, records2 = read_dataset(path)
        assert config2 == config
        assert len(records2) == len(records)

    def test_serialize_parse_serialize_byte_stable(self, small, tmp_path):
        config, records = small
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        write_dataset(p1, config, records)
        config2, records2 = read_dataset(p1)
        write_dataset(p2, config2, records2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_records_sorted(self, small, tmp_path):
        config, records = small
        path = tmp_path / "data.jsonl"
        shuffled = list(records)
        np.random.default_rng(3).shuffle(shuffled)
        write_dataset(path, config, shuffled)
        _, back = read_dataset(path)
        keys = [(r.sequence_id, r.frame_index, r.object_id) for r in back]
        assert keys == sorted(keys)

    def test_empty_file_error(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="empty dataset"):
            read_dataset(path)

    def test_unsupported_version(self, small, tmp_path):
        config, records = small
        path = tmp_path / "data.jsonl"
        write_dataset(path, config, records[:2])
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["format_version"] = 99
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(ValueError, match="format version"):
            read_dataset(path)

    def test_corrupt_record_names_line(self, small, tmp_path):
        config, records = small
        path = tmp_path / "data.jsonl"
        write_dataset(path, config, records[:3])
        lines = path.read_text().splitlines()
        doc = json.loads(lines[2])
        del doc["ground_truth"]
        lines[2] = json.dumps(doc)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="line 3"):
            read_dataset(path)

    def test_unknown_estimator_rejected(self, small, tmp_path):
        config, records = small
        path = tmp_path / "data.jsonl"
        write_dataset(path, config, records[:2])
        lines = path.read_text().splitlines()
        doc = json.loads(lines[1])
        doc["observations"][0]["estimator_id"] = "mystery"
        lines[1] = json.dumps(doc)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="unknown estimator"):
            read_dataset(path)

    def test_wrong_keypoint_count_rejected(self, small, tmp_path):
        config, records = small
        path = tmp_path / "data.jsonl"
        write_dataset(path, config, records[:2])
        lines = path.read_text().splitlines()
        for i in (1, 2):
            doc = json.loads(lines[i])
            for obs in doc["observations"]:
                if obs["detected"]:
                    obs["keypoints"]["points_2d"] = obs["keypoints"]["points_2d"][:5]
                    obs["keypoints"]["visible"] = obs["keypoints"]["visible"][:5]
                    lines[i] = json.dumps(doc)
                    path.write_text("\n".join(lines) + "\n")
                    with pytest.raises(ValueError, match="keypoints"):
                        read_dataset(path)
                    return
        pytest.skip("no detected observation in the first two records")

    def test_no_tmp_file_left_behind(self, small, tmp_path):
        config, records = small
        path = tmp_path / "data.jsonl"
        write_dataset(path, config, records)
        assert list(tmp_path.iterdir()) == [path]
