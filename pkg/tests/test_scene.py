import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupdet.errors import ValidationError
from groupdet.propagation import propagate_labels
from groupdet.scene import (
    GroupPartition,
    SceneClip,
    broadcast_partition,
    pair_mask,
    relation_matrix_from_partition,
    relation_tensor_from_clip,
)


def make_partition(groups, frame=0):
    return GroupPartition(frame, tuple(frozenset(g) for g in groups))


class TestRelationMatrix:
    def test_pair_and_singleton(self):
        r = relation_matrix_from_partition(make_partition([{1, 2}, {0}]), 3)
        expected = np.zeros((3, 3))
        expected[1, 2] = expected[2, 1] = 1.0
        assert np.array_equal(r, expected)

    def test_all_singletons_is_zero(self):
        r = relation_matrix_from_partition(make_partition([{0}, {1}, {2}]), 3)
        assert not r.any()

    def test_single_full_group(self):
        r = relation_matrix_from_partition(make_partition([{0, 1, 2, 3}]), 4)
        assert r.sum() == 12  # off-diagonal all ones
        assert np.array_equal(np.diag(r), np.zeros(4))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            relation_matrix_from_partition(make_partition([{0, 5}]), 3)

    @given(
        st.integers(2, 8).flatmap(
            lambda n: st.tuples(st.just(n), st.lists(st.integers(0, n - 1), max_size=n, unique=True))
        )
    )
    def test_symmetric_zero_diagonal(self, case):
        n, members = case
        half = len(members) // 2
        groups = [set(g) for g in (members[:half], members[half:]) if g]
        r = relation_matrix_from_partition(make_partition(groups), n)
        assert np.array_equal(r, r.T)
        assert not np.diag(r).any()

    @given(st.integers(3, 8), st.data())
    @settings(max_examples=60)
    def test_partition_matrix_components_roundtrip(self, n, data):
        # random disjoint groups of size >= 2
        idx = list(range(n))
        data.draw(st.randoms()).shuffle(idx)
        groups, i = [], 0
        while i + 2 <= n:
            size = data.draw(st.integers(2, min(3, n - i)))
            groups.append(frozenset(idx[i : i + size]))
            i += size
            if data.draw(st.booleans()):
                break
        part = make_partition(groups)
        r = relation_matrix_from_partition(part, n)
        labels, converged = propagate_labels(r > 0.5, np.ones(n, dtype=bool), n + 1)
        assert converged
        recovered = {}
        for s in range(n):
            recovered.setdefault(labels[s], set()).add(s)
        non_singletons = {frozenset(g) for g in recovered.values() if len(g) >= 2}
        assert non_singletons == set(groups)


class TestPartitionValidation:
    def test_overlapping_groups_rejected(self):
        with pytest.raises(ValidationError):
            make_partition([{0, 1}, {1, 2}]).validate(n_slots=4)

    def test_absent_member_rejected(self):
        presence = np.array([True, False, True])
        with pytest.raises(ValidationError):
            make_partition([{0, 1}]).validate(n_slots=3, presence=presence)

    def test_member_set(self):
        assert make_partition([{0, 1}, {3}]).member_set() == {0, 1, 3}


class TestSceneClip:
    def test_valid_roundtrip(self, small_clip):
        small_clip.validate()
        assert small_clip.n_frames == 6
        assert small_clip.presence.all()

    def test_absent_nonzero_rejected(self, small_clip):
        boxes = np.array(small_clip.boxes)
        presence = np.array(small_clip.presence)
        presence[0, 0] = False  # boxes still nonzero there
        clip = SceneClip("c", boxes, np.array(small_clip.joints), presence, small_clip.scene_extent)
        with pytest.raises(ValidationError):
            clip.validate()

    def test_nonfinite_rejected(self, small_clip):
        joints = np.array(small_clip.joints)
        joints[0, 0, 0, 0] = np.nan
        clip = SceneClip("c", np.array(small_clip.boxes), joints, np.array(small_clip.presence), small_clip.scene_extent)
        with pytest.raises(ValidationError):
            clip.validate()

    def test_without_labels_strips_gt(self, small_clip):
        assert small_clip.gt_partition is not None
        assert small_clip.without_labels().gt_partition is None

    def test_relation_tensor_shape(self, small_clip):
        r = relation_tensor_from_clip(small_clip)
        assert r.shape == (small_clip.n_frames, small_clip.n_slots, small_clip.n_slots)


def test_pair_mask_excludes_diagonal_and_absent():
    presence = np.array([True, True, False])
    m = pair_mask(presence)
    assert m[0, 1] and m[1, 0]
    assert not m[0, 0] and not m[2, 0] and not m[0, 2]


def test_broadcast_partition_drops_absent_members():
    presence = np.array([[True, True, True], [True, False, True]])
    parts = broadcast_partition([frozenset({0, 1}), frozenset({0, 2})], presence)
    assert parts[0].groups == (frozenset({0, 1}), frozenset({0, 2}))
    # frame 1: subject 1 absent -> its pair group vanishes
    assert parts[1].groups == (frozenset({0, 2}),)
