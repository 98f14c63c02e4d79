import math

import numpy as np
import pytest

from groupdet.errors import ValidationError
from groupdet.features import (
    FEATURE_DIM,
    POSITION_DIM,
    SKELETON_DIM,
    assemble_feature_block,
    encode_position,
    normalize_skeleton,
    pairwise_distance_channel,
)
from groupdet.synth import SynthParams, generate_synthetic_scene, skeleton_template


class TestNormalizeSkeleton:
    def test_origin_is_zero(self):
        v = normalize_skeleton(np.zeros((16, 2)), (100.0, 50.0))
        assert v.shape == (SKELETON_DIM,)
        assert not v.any()

    def test_corner_joint(self):
        joints = np.zeros((16, 2))
        joints[0] = [100.0, 50.0]
        v = normalize_skeleton(joints, (100.0, 50.0))
        assert v[0] == 1.0 and v[1] == 1.0
        assert not v[2:].any()

    def test_template_at_box_derived(self):
        # place the template at box (100, 100, 20, 50) in a 1000x1000 scene and
        # normalize by hand
        template = skeleton_template()
        joints = np.array([100.0, 100.0]) + template * np.array([20.0, 50.0])
        v = normalize_skeleton(joints, (1000.0, 1000.0))
        expected = (joints / 1000.0).reshape(-1)
        assert np.allclose(v, expected)

    def test_joint_major_layout(self):
        joints = np.arange(32, dtype=np.float64).reshape(16, 2)
        v = normalize_skeleton(joints, (1.0, 1.0))
        assert np.array_equal(v, np.arange(32))

    def test_zero_extent_rejected(self):
        with pytest.raises(ValidationError):
            normalize_skeleton(np.zeros((16, 2)), (0.0, 10.0))


class TestEncodePosition:
    def test_origin(self):
        v = encode_position((0.0, 0.0), (100.0, 100.0))
        assert v.shape == (POSITION_DIM,)
        assert np.array_equal(v[0::2], np.zeros(16))  # sines
        assert np.array_equal(v[1::2], np.ones(16))  # cosines

    def test_length_is_32(self):
        assert encode_position((12.0, 34.0), (640.0, 480.0)).shape == (32,)

    def test_full_width_first_pair(self):
        v = encode_position((640.0, 0.0), (640.0, 480.0))
        assert v[0] == pytest.approx(math.sin(1.0), abs=1e-12)
        assert v[1] == pytest.approx(math.cos(1.0), abs=1e-12)
        assert v[0] == pytest.approx(0.8415, abs=1e-4)
        assert v[1] == pytest.approx(0.5403, abs=1e-4)

    def test_geometric_frequencies(self):
        v = encode_position((640.0, 0.0), (640.0, 480.0))
        for k in range(8):
            freq = 10000.0 ** (-2 * k / 16)
            assert v[2 * k] == pytest.approx(math.sin(freq), abs=1e-12)

    def test_raw_mode_uses_pixels(self):
        v = encode_position((2.0, 0.0), (640.0, 480.0), normalized=False)
        assert v[0] == pytest.approx(math.sin(2.0), abs=1e-12)

    def test_injective_on_grid(self):
        xs = np.linspace(0.0, 1000.0, 100)
        ys = np.linspace(0.0, 800.0, 100)
        grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
        enc = encode_position(grid, (1000.0, 800.0))
        assert enc.shape == (10000, 32)
        uniq = np.unique(enc.round(decimals=12), axis=0)
        assert uniq.shape[0] == 10000


class TestAssemble:
    def test_dims_and_zero_fill(self, small_clip):
        block = assemble_feature_block(small_clip).validate()
        assert block.V.shape[-1] == FEATURE_DIM

    def test_absent_subject_zero(self, small_clip):
        presence = np.array(small_clip.presence)
        presence[2, 1] = False
        boxes = np.array(small_clip.boxes)
        joints = np.array(small_clip.joints)
        boxes[2, 1] = 0.0
        joints[2, 1] = 0.0
        from groupdet.scene import SceneClip

        clip = SceneClip("c", boxes, joints, presence, small_clip.scene_extent)
        block = assemble_feature_block(clip).validate()
        assert not block.V[2, 1].any()

    def test_identical_inputs_identical_rows(self, small_clip):
        boxes = np.array(small_clip.boxes)
        joints = np.array(small_clip.joints)
        boxes[0, 1] = boxes[0, 0]
        joints[0, 1] = joints[0, 0]
        from groupdet.scene import SceneClip

        clip = SceneClip("c", boxes, joints, np.array(small_clip.presence), small_clip.scene_extent)
        block = assemble_feature_block(clip)
        assert np.array_equal(block.V[0, 0], block.V[0, 1])

    def test_permutation_equivariant(self, small_clip):
        rng = np.random.default_rng(0)
        perm = rng.permutation(small_clip.n_slots)
        from groupdet.scene import SceneClip

        permuted = SceneClip(
            "p",
            np.array(small_clip.boxes)[:, perm],
            np.array(small_clip.joints)[:, perm],
            np.array(small_clip.presence)[:, perm],
            small_clip.scene_extent,
        )
        b1 = assemble_feature_block(small_clip)
        b2 = assemble_feature_block(permuted)
        assert np.array_equal(b1.V[:, perm], b2.V)


class TestDistanceChannel:
    def test_examples(self):
        from groupdet.scene import SceneClip

        boxes = np.zeros((1, 3, 4))
        boxes[0, 0, :2] = [0.0, 0.0]
        boxes[0, 1, :2] = [300.0, 400.0]
        boxes[0, 2, :2] = [1000.0, 1000.0]
        boxes[0, :, 2:] = 10.0
        joints = np.ones((1, 3, 16, 2))
        clip = SceneClip("d", boxes, joints, np.ones((1, 3), dtype=bool), (1000.0, 1000.0))
        d = pairwise_distance_channel(clip).validate().D
        assert d[0, 0, 0] == 0.0
        assert d[0, 0, 2] == pytest.approx(1.0)  # opposite corners = one diagonal
        assert d[0, 0, 1] == pytest.approx(500.0 / math.hypot(1000.0, 1000.0), abs=1e-9)
        assert d[0, 0, 1] == pytest.approx(0.3536, abs=1e-4)

    def test_absent_pairs_max_distance(self, small_clip):
        presence = np.array(small_clip.presence)
        presence[0, 2] = False
        boxes = np.array(small_clip.boxes)
        joints = np.array(small_clip.joints)
        boxes[0, 2] = 0.0
        joints[0, 2] = 0.0
        from groupdet.scene import SceneClip

        clip = SceneClip("d", boxes, joints, presence, small_clip.scene_extent)
        d = pairwise_distance_channel(clip).D
        assert d[0, 2, 0] == 1.0 and d[0, 0, 2] == 1.0
        assert d[0, 2, 2] == 0.0  # diagonal stays zero

    def test_translation_invariant(self, small_clip):
        from groupdet.scene import SceneClip

        shift = np.array([37.0, -12.0])
        boxes = np.array(small_clip.boxes)
        boxes[..., :2] += shift
        clip = SceneClip("t", boxes, np.array(small_clip.joints) + shift, np.array(small_clip.presence), small_clip.scene_extent)
        d1 = pairwise_distance_channel(small_clip).D
        d2 = pairwise_distance_channel(clip).D
        assert np.allclose(d1, d2, atol=1e-12)
