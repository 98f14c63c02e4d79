import json

import numpy as np
import pytest

from groupdet.errors import CapacityError, ParseError
from groupdet.io import load_clip_dataset, save_clip_dataset
from groupdet.scene import N_JOINTS


def body_line(frame, subject, cx, cy, w=10.0, h=20.0):
    joints = " ".join("0.0 0.0" for _ in range(N_JOINTS))
    return f"{frame} {subject} {cx} {cy} {w} {h} {joints}"


class TestNative:
    def test_two_clips(self, tmp_path):
        path = tmp_path / "two.txt"
        path.write_text(
            "\n".join(
                [
                    "clip a 1 2 100.0 100.0",
                    body_line(0, 0, 5.0, 5.0),
                    body_line(0, 1, 50.0, 50.0),
                    "clip b 1 1 100.0 100.0",
                    body_line(0, 0, 9.0, 9.0),
                ]
            )
        )
        clips = load_clip_dataset(str(path))
        assert [c.clip_id for c in clips] == ["a", "b"]
        assert clips[0].n_slots == 2 and clips[1].n_slots == 1

    def test_missing_subject_zero_filled(self, tmp_path):
        path = tmp_path / "gap.txt"
        lines = ["clip a 4 6 100.0 100.0"]
        for f in range(4):
            for s in range(6):
                if (f, s) == (3, 5):
                    continue
                lines.append(body_line(f, s, 1.0 + s, 2.0 + f))
        path.write_text("\n".join(lines))
        clip = load_clip_dataset(str(path))[0]
        assert not clip.presence[3, 5]
        assert clip.presence.sum() == 23
        assert not clip.boxes[3, 5].any() and not clip.joints[3, 5].any()

    def test_nonfinite_coordinate_names_location(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("clip a 1 1 100.0 100.0\n" + body_line(0, 0, "nan", 5.0))
        with pytest.raises(ParseError) as e:
            load_clip_dataset(str(path))
        assert "bad.txt" in str(e.value) and ":2" in str(e.value)

    def test_capacity_exceeded(self, tmp_path):
        path = tmp_path / "cap.txt"
        path.write_text("clip a 1 2 100.0 100.0\n" + body_line(0, 2, 5.0, 5.0))
        with pytest.raises(CapacityError):
            load_clip_dataset(str(path))

    def test_malformed_record(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("clip a 1 1 100.0 100.0\n0 0 1.0 2.0\n")
        with pytest.raises(ParseError) as e:
            load_clip_dataset(str(path))
        assert "line" not in str(e.value) or ":2" in str(e.value)

    def test_roundtrip_byte_identical(self, tmp_path, clip_batch):
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        save_clip_dataset(clip_batch, str(p1))
        again = load_clip_dataset(str(p1))
        save_clip_dataset(again, str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        for orig, back in zip(clip_batch, again):
            assert np.array_equal(orig.boxes, back.boxes)
            assert np.array_equal(orig.joints, back.joints)
            assert orig.gt_partition == back.gt_partition

    def test_group_records_roundtrip(self, tmp_path, small_clip):
        path = tmp_path / "g.txt"
        save_clip_dataset([small_clip], str(path))
        back = load_clip_dataset(str(path))[0]
        assert back.gt_partition is not None
        for orig, loaded in zip(small_clip.gt_partition, back.gt_partition):
            assert set(orig.groups) == set(loaded.groups)

    def test_directory_loading(self, tmp_path, clip_batch):
        save_clip_dataset(clip_batch[:2], str(tmp_path / "one.txt"))
        save_clip_dataset(clip_batch[2:], str(tmp_path / "two.txt"))
        clips = load_clip_dataset(str(tmp_path))
        assert len(clips) == len(clip_batch)


def panda_doc():
    return {
        "scene name": "plaza 01",
        "image size": {"width": 200.0, "height": 100.0},
        "frame count": 2,
        "tracks": [
            {
                "track id": 7,
                "frames": [
                    {"frame id": 1, "rect": {"tl": {"x": 10, "y": 20}, "br": {"x": 20, "y": 40}}},
                    {"frame id": 2, "rect": {"tl": {"x": 12, "y": 20}, "br": {"x": 22, "y": 40}}},
                ],
            },
            {
                "track id": 3,
                "frames": [{"frame id": 1, "rect": {"tl": {"x": 100, "y": 50}, "br": {"x": 110, "y": 70}}}],
            },
        ],
        "groups": [{"group id": 1, "members": [7, 3]}],
    }


class TestPandaLike:
    def test_track_mapping_and_broadcast(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(panda_doc()))
        clip = load_clip_dataset(str(path), schema="panda-like")[0]
        # track ids sorted: 3 -> slot 0, 7 -> slot 1
        assert clip.n_slots == 2 and clip.n_frames == 2
        assert clip.presence[0].all() and not clip.presence[1, 0]
        assert np.allclose(clip.boxes[0, 1], [15.0, 30.0, 10.0, 20.0])
        # clip-level group broadcast; frame 1 lost the absent member
        assert clip.gt_partition[0].groups == (frozenset({0, 1}),)
        assert clip.gt_partition[1].groups == ()

    def test_template_joints_fallback(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(panda_doc()))
        clip = load_clip_dataset(str(path), schema="panda-like")[0]
        assert clip.joints[0, 1].any()

    def test_missing_field(self, tmp_path):
        doc = panda_doc()
        del doc["image size"]
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ParseError):
            load_clip_dataset(str(path), schema="panda-like")


def jrdb_doc():
    return {
        "clip_id": "hall",
        "image size": {"width": 300.0, "height": 150.0},
        "labels": {
            "0": [
                {"label_id": "pedestrian:1", "box": [10, 10, 10, 20], "social_group": {"cluster_ID": 0}},
                {"label_id": "pedestrian:2", "box": [25, 10, 10, 20], "social_group": {"cluster_ID": 0}},
                {"label_id": "pedestrian:9", "box": [200, 100, 10, 20], "social_group": {"cluster_ID": 1}},
            ],
            "1": [
                {"label_id": "pedestrian:1", "box": [11, 10, 10, 20], "social_group": {"cluster_ID": 0}},
                {"label_id": "pedestrian:2", "box": [26, 10, 10, 20], "social_group": {"cluster_ID": 0}},
            ],
        },
    }


class TestJrdbLike:
    def test_per_frame_groups(self, tmp_path):
        path = tmp_path / "hall.json"
        path.write_text(json.dumps(jrdb_doc()))
        clip = load_clip_dataset(str(path), schema="jrdb-like")[0]
        assert clip.n_slots == 3 and clip.n_frames == 2
        assert clip.gt_partition[0].groups == (frozenset({0, 1}),)  # singleton cluster dropped
        assert clip.gt_partition[1].groups == (frozenset({0, 1}),)
        assert not clip.presence[1, 2]

    def test_box_center_conversion(self, tmp_path):
        path = tmp_path / "hall.json"
        path.write_text(json.dumps(jrdb_doc()))
        clip = load_clip_dataset(str(path), schema="jrdb-like")[0]
        assert np.allclose(clip.boxes[0, 0], [15.0, 20.0, 10.0, 20.0])

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_clip_dataset(str(path), schema="jrdb-like")


def test_unknown_schema(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("clip a 1 1 10.0 10.0\n" + body_line(0, 0, 1.0, 1.0))
    with pytest.raises(ParseError):
        load_clip_dataset(str(path), schema="csv")
