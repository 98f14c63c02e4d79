import itertools

import numpy as np
import pytest
import torch

from gradcheck import assert_gradients_match
from groupdet.embedding import (
    EmbeddingConfig,
    RelationEmbeddingNet,
    SkeletonBranch,
    clip_geometry,
    embed,
    init_parameters,
    subject_adjacency,
)
from groupdet.errors import ConfigurationError, StateError, ValidationError
from groupdet.features import FEATURE_DIM, assemble_feature_block


def tiny_inputs(t=4, n=3, seed=0, dtype=torch.float64, all_present=True):
    rng = np.random.default_rng(seed)
    v = torch.from_numpy(rng.standard_normal((t, n, FEATURE_DIM))).to(dtype)
    centers = rng.uniform(100, 900, (t, n, 2))
    presence = np.ones((t, n), dtype=bool)
    if not all_present:
        presence[t // 2, n - 1] = False
    adj = subject_adjacency(centers, presence, np.hypot(1000, 800), 0.5)
    v = v * torch.from_numpy(presence)[..., None].to(dtype)
    return v, torch.from_numpy(adj).to(dtype), torch.from_numpy(presence)


def make_net(cfg=None, seed=0, dtype=torch.float64):
    net = RelationEmbeddingNet(cfg or EmbeddingConfig()).to(dtype)
    init_parameters(net, seed)
    return net


class TestShapesAndDeterminism:
    def test_output_shape(self):
        net = make_net()
        v, adj, pres = tiny_inputs()
        e = net(v, adj, pres)
        assert e.shape == (4, 3, net.cfg.embed_dim)

    def test_deterministic_forward(self):
        net = make_net()
        v, adj, pres = tiny_inputs()
        e1 = net(v, adj, pres)
        e2 = net(v, adj, pres)
        assert torch.equal(e1, e2)

    def test_embed_wrapper_matches_forward(self, small_clip):
        net = make_net(dtype=torch.float32)
        block = assemble_feature_block(small_clip)
        e = embed(net, block, small_clip)
        adj = clip_geometry(small_clip, net.cfg)
        direct = net(
            torch.from_numpy(block.V).float(),
            torch.from_numpy(adj).float(),
            torch.from_numpy(np.array(small_clip.presence)),
        )
        assert np.allclose(e, direct.detach().numpy())

    def test_embed_requires_network(self, small_clip):
        block = assemble_feature_block(small_clip)
        with pytest.raises(StateError):
            embed(None, block, small_clip)

    def test_short_clip_rejected(self):
        net = make_net()
        v, adj, pres = tiny_inputs(t=2)
        with pytest.raises(ConfigurationError):
            net(v, adj, pres)

    def test_wrong_feature_dim_rejected(self):
        net = make_net()
        with pytest.raises(ValidationError):
            net(torch.zeros(4, 3, 10, dtype=torch.float64), torch.zeros(4, 3, 3, dtype=torch.float64))


class TestSkeletonBranch:
    def test_identical_subjects_identical_outputs(self):
        cfg = EmbeddingConfig()
        branch = SkeletonBranch(cfg).to(torch.float64)
        init_parameters(branch, 3)
        k = torch.randn(5, 2, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        k[:, 1] = k[:, 0]
        out = branch(k)
        assert torch.allclose(out[:, 0], out[:, 1])

    def test_zero_input_bias_free_is_zero(self):
        cfg = EmbeddingConfig()
        branch = SkeletonBranch(cfg, bias=False).to(torch.float64)
        init_parameters(branch, 3)
        out = branch(torch.zeros(5, 3, 32, dtype=torch.float64))
        assert torch.equal(out, torch.zeros_like(out))

    def test_output_shape_uses_configured_width(self):
        cfg = EmbeddingConfig(skeleton_out_dim=20)
        branch = SkeletonBranch(cfg).to(torch.float64)
        init_parameters(branch, 3)
        out = branch(torch.randn(5, 3, 32, dtype=torch.float64))
        assert out.shape == (5, 3, 20)

    def test_no_cross_subject_mixing(self):
        cfg = EmbeddingConfig()
        branch = SkeletonBranch(cfg).to(torch.float64)
        init_parameters(branch, 3)
        gen = torch.Generator().manual_seed(1)
        k = torch.randn(5, 3, 32, dtype=torch.float64, generator=gen)
        out1 = branch(k)
        k2 = k.clone()
        k2[:, 2] += 10.0
        out2 = branch(k2)
        assert torch.allclose(out1[:, :2], out2[:, :2])


class TestInvariants:
    def test_absent_rows_zero(self):
        net = make_net()
        v, adj, pres = tiny_inputs(all_present=False)
        e = net(v, adj, pres)
        absent = ~pres
        assert torch.equal(e[absent], torch.zeros_like(e[absent]))

    def test_single_subject_self_dependent(self):
        net = make_net()
        v, adj, pres = tiny_inputs(n=1)
        e1 = net(v, adj, pres)
        e2 = net(v * 2.0, adj, pres)
        assert not torch.allclose(e1, e2)

    def test_permutation_equivariance_exhaustive(self):
        net = make_net()
        t, n = 4, 6
        v, adj, pres = tiny_inputs(t=t, n=n, seed=5)
        worst = 0.0
        with torch.no_grad():
            e = net(v, adj, pres)
            for perm in itertools.permutations(range(n)):
                p = list(perm)
                ep = net(v[:, p], adj[:, p][:, :, p], pres[:, p])
                worst = max(worst, float((ep - e[:, p]).abs().max()))
        assert worst < 1e-5

    def test_locality_disconnected_clusters(self):
        # two clusters far beyond the neighbor radius: changing cluster B's
        # features must leave cluster A's embeddings bit-unchanged
        cfg = EmbeddingConfig(neighbor_radius=0.05)
        net = make_net(cfg)
        t, n = 4, 6
        rng = np.random.default_rng(7)
        centers = np.zeros((t, n, 2))
        centers[:, :3] = rng.uniform(0, 40, (t, 3, 2))
        centers[:, 3:] = rng.uniform(900, 990, (t, 3, 2))
        presence = np.ones((t, n), dtype=bool)
        adj = subject_adjacency(centers, presence, np.hypot(1000.0, 800.0), cfg.neighbor_radius)
        assert adj[:, :3, 3:].sum() == 0  # really disconnected
        v = torch.from_numpy(rng.standard_normal((t, n, FEATURE_DIM)))
        e1 = net(v, torch.from_numpy(adj), torch.from_numpy(presence))
        v2 = v.clone()
        v2[:, 3:] += 5.0
        e2 = net(v2, torch.from_numpy(adj), torch.from_numpy(presence))
        assert torch.equal(e1[:, :3], e2[:, :3])

    def test_locality_hop_limited(self):
        # a chain a-b-c-d-e: with 2 layers, e's features cannot reach a
        cfg = EmbeddingConfig(stgc_layers=2)
        net = make_net(cfg)
        t, n = 4, 5
        adj = np.zeros((t, n, n))
        for i in range(n - 1):
            adj[:, i, i + 1] = adj[:, i + 1, i] = 1.0
        presence = np.ones((t, n), dtype=bool)
        rng = np.random.default_rng(3)
        v = torch.from_numpy(rng.standard_normal((t, n, FEATURE_DIM)))
        e1 = net(v, torch.from_numpy(adj), torch.from_numpy(presence))
        v2 = v.clone()
        v2[:, 4] += 3.0
        e2 = net(v2, torch.from_numpy(adj), torch.from_numpy(presence))
        assert torch.equal(e1[:, 0], e2[:, 0])  # 4 hops away
        assert not torch.allclose(e1[:, 2], e2[:, 2])  # 2 hops away


class TestGradients:
    def test_embed_gradcheck_all_present(self):
        net = make_net(seed=11)
        v, adj, pres = tiny_inputs(t=4, n=3, seed=2)
        w = torch.randn(4, 3, net.cfg.embed_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(9))

        def loss_fn():
            return (net(v, adj, pres) * w).sum()

        assert_gradients_match(net, loss_fn)

    def test_embed_gradcheck_with_absent_subject(self):
        net = make_net(seed=12)
        v, adj, pres = tiny_inputs(t=4, n=3, seed=4, all_present=False)
        w = torch.randn(4, 3, net.cfg.embed_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(10))

        def loss_fn():
            return (net(v, adj, pres) * w).sum()

        assert_gradients_match(net, loss_fn)


def test_init_parameters_deterministic():
    a = make_net(seed=5)
    b = make_net(seed=5)
    for (n1, p1), (n2, p2) in zip(sorted(a.named_parameters()), sorted(b.named_parameters())):
        assert n1 == n2 and torch.equal(p1, p2)
    c = make_net(seed=6)
    assert any(not torch.equal(p1, p2) for (_, p1), (_, p2) in zip(sorted(a.named_parameters()), sorted(c.named_parameters())))
