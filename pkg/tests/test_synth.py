import numpy as np
import pytest

from groupdet.errors import GenerationError, ValidationError
from groupdet.synth import MOTION_MODELS, SynthParams, generate_synthetic_scene


class TestDeterminismAndStructure:
    def test_same_seed_bitwise_identical(self):
        a = generate_synthetic_scene(SynthParams(seed=7))
        b = generate_synthetic_scene(SynthParams(seed=7))
        assert np.array_equal(a.boxes, b.boxes)
        assert np.array_equal(a.joints, b.joints)
        assert a.gt_partition == b.gt_partition

    def test_different_seed_differs(self):
        a = generate_synthetic_scene(SynthParams(seed=7))
        b = generate_synthetic_scene(SynthParams(seed=8))
        assert not np.array_equal(a.boxes, b.boxes)

    def test_group_and_loner_counts(self):
        params = SynthParams(n_groups=3, group_size_range=(2, 4), n_loners=2, seed=3)
        clip = generate_synthetic_scene(params)
        part = clip.gt_partition[0]
        assert len(part.groups) == 3
        grouped = part.member_set()
        assert all(2 <= len(g) <= 4 for g in part.groups)
        assert clip.n_slots - len(grouped) == 2  # loners stay unassigned

    def test_partition_constant_across_frames(self):
        clip = generate_synthetic_scene(SynthParams(seed=5))
        first = set(clip.gt_partition[0].groups)
        assert all(set(p.groups) == first for p in clip.gt_partition)

    @pytest.mark.parametrize("model", MOTION_MODELS)
    def test_all_models_valid(self, model):
        clip = generate_synthetic_scene(SynthParams(motion_model=model, seed=9))
        clip.validate()
        assert clip.presence.all()


class TestMotionOracles:
    def test_walk_together_shared_displacement(self):
        # the generator adds iid per-frame uniform noise <= noise_scale per
        # coordinate on top of a shared group displacement, so member
        # displacement vectors may differ by at most 4 * noise_scale
        noise = 1.5
        params = SynthParams(n_groups=3, n_loners=0, motion_model="walk-together", noise_scale=noise, seed=21)
        clip = generate_synthetic_scene(params)
        disp = np.diff(clip.centers, axis=0)  # (T-1, N, 2)
        for part in clip.gt_partition[:1]:
            for group in part.groups:
                members = sorted(group)
                for t in range(disp.shape[0]):
                    vecs = disp[t, members]
                    spread = np.abs(vecs - vecs[0]).max()
                    assert spread <= 4 * noise + 1e-9

    def test_walk_together_exact_without_noise(self):
        params = SynthParams(n_groups=2, n_loners=0, motion_model="walk-together", noise_scale=0.0, seed=2)
        clip = generate_synthetic_scene(params)
        disp = np.diff(clip.centers, axis=0)
        for group in clip.gt_partition[0].groups:
            members = sorted(group)
            assert np.allclose(disp[:, members], disp[:, members[0]][:, None, :], atol=1e-9)

    def test_groups_spatially_coherent(self):
        clip = generate_synthetic_scene(SynthParams(n_groups=4, n_loners=0, seed=13))
        part = clip.gt_partition[0]
        centers = clip.centers[0]
        intra, inter = [], []
        groups = [sorted(g) for g in part.groups]
        for gi, g in enumerate(groups):
            for i in g:
                for j in g:
                    if i < j:
                        intra.append(np.linalg.norm(centers[i] - centers[j]))
                for other in groups[gi + 1 :]:
                    for j in other:
                        inter.append(np.linalg.norm(centers[i] - centers[j]))
        assert np.mean(intra) < np.mean(inter)

    def test_height_grows_with_image_y(self):
        clip = generate_synthetic_scene(SynthParams(n_groups=5, n_loners=3, seed=4))
        cy = clip.boxes[0, :, 1]
        h = clip.boxes[0, :, 3]
        order = np.argsort(cy)
        # correlation positive and strong despite the per-person height factor
        corr = np.corrcoef(cy[order], h[order])[0, 1]
        assert corr > 0.8


class TestErrors:
    def test_empty_scene_rejected(self):
        with pytest.raises(GenerationError):
            generate_synthetic_scene(SynthParams(n_groups=0, n_loners=0, seed=0))

    def test_overcrowded_scene_rejected(self):
        params = SynthParams(n_groups=30, group_size_range=(4, 4), n_loners=0, scene_extent=(300.0, 300.0), seed=0)
        with pytest.raises(GenerationError):
            generate_synthetic_scene(params)

    def test_bad_size_range(self):
        with pytest.raises(ValidationError):
            SynthParams(group_size_range=(4, 2)).validate()

    def test_bad_model(self):
        with pytest.raises(ValidationError):
            SynthParams(motion_model="teleport").validate()

    def test_negative_counts(self):
        with pytest.raises(ValidationError):
            SynthParams(n_groups=-1).validate()
