import numpy as np
import pytest
import torch

from conftest import finite_diff_check
from tactbench import encoders as enc


@pytest.fixture(scope="module")
def cfg():
    return enc.EncoderConfig()


@pytest.fixture(scope="module")
def small_cfg():
    return enc.EncoderConfig(
        embed_dim=8, latent_dim=4, head_hidden=8, channels=(4, 8), strides=(4, 2),
        tactile_horizon=2,
    )


class TestVisionEncoder:
    def test_zero_image_zero_final_layer(self, cfg):
        torch.manual_seed(0)
        net = enc.VisionEncoder(cfg)
        with torch.no_grad():
            net.head.weight.zero_()
            net.head.bias.zero_()
        emb, fmap = net(torch.zeros(2, 3, 64, 64))
        assert torch.all(emb == 0)
        assert torch.all(fmap == 0)

    def test_identical_inputs_identical_rows(self, cfg):
        torch.manual_seed(0)
        net = enc.VisionEncoder(cfg)
        x = torch.rand(1, 3, 64, 64).repeat(2, 1, 1, 1)
        emb, _ = net(x)
        assert torch.equal(emb[0], emb[1])

    def test_feature_map_geometry(self, cfg):
        torch.manual_seed(0)
        net = enc.VisionEncoder(cfg)
        emb, fmap = net(torch.rand(1, 3, 64, 64))
        # Stride schedule {4, 2, 2} on 64x64 gives a 4x4 map: 16 tokens.
        assert fmap.shape == (1, cfg.embed_dim, 4, 4)
        assert fmap.shape[2] * fmap.shape[3] == 16
        assert emb.shape == (1, cfg.embed_dim)
        # Embedding is the spatial average of the feature map.
        assert torch.allclose(emb, fmap.mean(dim=(-2, -1)))

    def test_input_validation(self, cfg):
        torch.manual_seed(0)
        net = enc.VisionEncoder(cfg)
        with pytest.raises(ValueError):
            net(torch.rand(1, 4, 64, 64))
        bad = torch.rand(1, 3, 64, 64)
        bad[0, 0, 0, 0] = float("nan")
        with pytest.raises(ValueError):
            net(bad)

    def test_gradient_matches_finite_differences(self, small_cfg):
        torch.manual_seed(0)
        net = enc.VisionEncoder(small_cfg, in_channels=3).double()
        x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        w = torch.randn(small_cfg.embed_dim, dtype=torch.float64)

        def loss_fn():
            emb, _ = net(x)
            return (emb[0] * w).sum()

        params = [p for p in net.parameters()]
        worst = finite_diff_check(loss_fn, params, n_probe=6)
        assert worst < 1e-4


class TestTactileEncoder:
    def test_horizon_channel_contract(self, cfg):
        torch.manual_seed(0)
        net = enc.TactileEncoder(cfg)
        emb, _ = net(torch.rand(2, 15, 48, 48))
        assert emb.shape == (2, cfg.embed_dim)
        with pytest.raises(enc.HorizonMismatchError):
            net(torch.rand(2, 12, 48, 48))

    def test_degenerate_horizon(self):
        torch.manual_seed(0)
        cfg1 = enc.EncoderConfig(tactile_horizon=1)
        net = enc.TactileEncoder(cfg1)
        emb, _ = net(torch.rand(1, 3, 48, 48))
        assert emb.shape == (1, cfg1.embed_dim)

    def test_frame_order_sensitivity(self, cfg):
        torch.manual_seed(1)
        net = enc.TactileEncoder(cfg)
        frames = torch.rand(1, 15, 48, 48)
        permuted = torch.cat([frames[:, 3:], frames[:, :3]], dim=1)
        emb_a, _ = net(frames)
        emb_b, _ = net(permuted)
        assert not torch.allclose(emb_a, emb_b)


class TestProjectionHead:
    def test_unit_norm(self, cfg):
        torch.manual_seed(0)
        head = enc.ProjectionHead(cfg, with_proprio=False)
        out = head(torch.randn(16, cfg.embed_dim))
        assert torch.all((out.norm(dim=-1) - 1).abs() < 1e-6)

    def test_scale_invariance(self, cfg):
        # Bias-free layers are positively homogeneous, so scaling the input
        # leaves the normalized latent unchanged.
        torch.manual_seed(0)
        head = enc.ProjectionHead(cfg, with_proprio=False)
        x = torch.randn(4, cfg.embed_dim)
        a = head(x)
        b = head(2 * x)
        assert torch.allclose(a, b, atol=1e-6)

    def test_proprio_contract(self, cfg):
        torch.manual_seed(0)
        tactile_head = enc.ProjectionHead(cfg, with_proprio=True)
        vision_head = enc.ProjectionHead(cfg, with_proprio=False)
        emb = torch.randn(2, cfg.embed_dim)
        proprio = torch.randn(2, cfg.proprio_dim)
        with pytest.raises(enc.ProjectionContractError):
            tactile_head(emb)
        with pytest.raises(enc.ProjectionContractError):
            vision_head(emb, proprio)

    def test_proprio_changes_latent(self, cfg):
        torch.manual_seed(0)
        head = enc.ProjectionHead(cfg, with_proprio=True)
        emb = torch.randn(1, cfg.embed_dim)
        a = head(emb, torch.tensor([[0.1, 0.2, 0.3]]))
        b = head(emb, torch.tensor([[0.4, 0.1, 0.9]]))
        assert not torch.allclose(a, b)


class TestStandardize:
    def test_constant_image_maps_to_zero(self):
        x = torch.full((1, 3, 8, 8), 0.7)
        assert torch.all(enc.standardize_image(x).abs() < 1e-5)

    def test_unit_stats(self):
        torch.manual_seed(0)
        x = torch.rand(2, 3, 32, 32)
        z = enc.standardize_image(x)
        assert torch.all(z.mean(dim=(-2, -1)).abs() < 1e-5)
        assert torch.all((z.std(dim=(-2, -1)) - 1).abs() < 1e-3)


class TestStateArrays:
    def test_roundtrip(self, cfg):
        torch.manual_seed(0)
        a = enc.VisionEncoder(cfg)
        b = enc.VisionEncoder(cfg)
        assert not np.array_equal(enc.params_vector(a), enc.params_vector(b))
        arrays = enc.state_arrays(a, "vis")
        enc.load_state_arrays(b, "vis", arrays)
        assert np.array_equal(enc.params_vector(a), enc.params_vector(b))

    def test_set_frozen(self, cfg):
        torch.manual_seed(0)
        net = enc.VisionEncoder(cfg)
        enc.set_frozen(net, True)
        assert all(not p.requires_grad for p in net.parameters())
        enc.set_frozen(net, False)
        assert all(p.requires_grad for p in net.parameters())
