import numpy as np
import pytest

from vlm3d import autodiff as ad
from vlm3d.encoders import (TextEncoder, TextEncoderConfig, ViTConfig,
                            VisionTransformer3D, paper_scale_vit_config,
                            patchify, patchify_array, unpatchify_array,
                            vit_encode)
from vlm3d.errors import NonDivisibleShapeError, ShapeMismatchError
from vlm3d.volume import Volume

TOY = ViTConfig(channels=1, depth=8, height=16, width=16, patch=(4, 8, 8),
                layers=2, dim=16, heads=2)


class TestPatchify:
    def test_paper_scale_patch_count(self):
        cfg = paper_scale_vit_config()
        assert cfg.n_patches == 2048
        vol = np.zeros((1, 32, 256, 256), dtype=np.float32)
        patches = patchify_array(vol, cfg.patch)
        assert patches.shape == (2048, 1 * 4 * 16 * 16)

    def test_single_patch_volume(self):
        cfg = ViTConfig(channels=1, depth=4, height=8, width=8, patch=(4, 8, 8),
                        layers=1, dim=8, heads=1)
        rng = np.random.default_rng(0)
        v = Volume(rng.random((1, 4, 8, 8), dtype=np.float32))
        seq = patchify(v, cfg)
        assert seq.length == 1
        np.testing.assert_array_equal(seq.array()[0], v.data.ravel())

    def test_depth_major_order(self):
        rng = np.random.default_rng(1)
        vol = rng.random((1, 8, 16, 16)).astype(np.float32)
        patches = patchify_array(vol, (4, 16, 16))
        assert patches.shape == (2, 4 * 16 * 16)
        np.testing.assert_array_equal(patches[0], vol[:, 0:4].ravel())
        np.testing.assert_array_equal(patches[1], vol[:, 4:8].ravel())

    def test_unpatchify_inverse(self):
        rng = np.random.default_rng(2)
        vol = rng.random((2, 8, 16, 16)).astype(np.float32)
        patches = patchify_array(vol, (2, 4, 8))
        back = unpatchify_array(patches, (2, 4, 8), 2, (8, 16, 16))
        np.testing.assert_array_equal(back, vol)

    def test_non_divisible_shape(self):
        with pytest.raises(NonDivisibleShapeError):
            ViTConfig(depth=10, height=16, width=16, patch=(4, 8, 8))
        with pytest.raises(NonDivisibleShapeError):
            patchify_array(np.zeros((1, 10, 16, 16)), (4, 8, 8))


class TestVisionTransformer:
    def test_output_length_includes_cls(self):
        rng = np.random.default_rng(3)
        model = VisionTransformer3D(TOY, rng)
        v = Volume(np.random.default_rng(0).random((1, 8, 16, 16), dtype=np.float32))
        seq = vit_encode(v, model)
        assert seq.length == TOY.n_patches + 1
        assert seq.width == TOY.dim
        assert seq.roles[0] == "[CLS]"

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        model = VisionTransformer3D(TOY, rng)
        v = np.random.default_rng(1).random((1, 1, 8, 16, 16)).astype(np.float32)
        a = model.forward_batch(v).data
        b = model.forward_batch(v.copy()).data
        np.testing.assert_array_equal(a, b)

    def test_identity_blocks_give_normed_projection(self):
        """With attention/MLP contributions zeroed, the forward reduces to
        the layer-normed projected patches plus positions."""
        cfg = ViTConfig(channels=1, depth=8, height=16, width=16, patch=(4, 8, 8),
                        layers=1, dim=16, heads=2, dtype=np.float64)
        rng = np.random.default_rng(5)
        model = VisionTransformer3D(cfg, rng)
        for blk in model.blocks:
            blk.attn.wo.weight.data[:] = 0
            blk.attn.wo.bias.data[:] = 0
            blk.mlp.fc2.weight.data[:] = 0
            blk.mlp.fc2.bias.data[:] = 0
        vol = np.random.default_rng(2).random((1, 1, 8, 16, 16))
        out = model.forward_batch(vol).data[0]

        flat = patchify_array(vol[0].astype(np.float64), cfg.patch)
        zs = (flat - flat.mean()) / flat.std()
        centers = np.linspace(0.0, 1.0, cfg.intensity_bins)
        hist = np.exp(-((flat[..., None] - centers) ** 2)
                      / (2.0 * cfg.bin_sigma ** 2)).mean(axis=1)
        vol_hist = hist.mean(axis=0, keepdims=True)
        vol_hist = vol_hist / np.linalg.norm(vol_hist)
        vol_hist = np.broadcast_to(vol_hist, hist.shape)
        feats = np.concatenate([zs, cfg.bin_gain * hist, cfg.bin_gain * vol_hist], axis=-1)
        proj = feats @ model.patch_proj.weight.data + model.patch_proj.bias.data
        tokens = np.concatenate([model.cls_token.data, proj]) + model.pos.data
        mu = tokens.mean(axis=-1, keepdims=True)
        var = ((tokens - mu) ** 2).mean(axis=-1, keepdims=True)
        xhat = (tokens - mu) / np.sqrt(var + 1e-5)
        expect = xhat * model.ln_out.weight.data + model.ln_out.bias.data
        np.testing.assert_allclose(out, expect, atol=1e-10)

    def test_batch_permutation_no_leakage(self):
        rng = np.random.default_rng(6)
        model = VisionTransformer3D(TOY, rng)
        vols = np.random.default_rng(3).random((2, 1, 8, 16, 16)).astype(np.float32)
        fwd = model.forward_batch(vols).data
        swapped = model.forward_batch(vols[::-1].copy()).data
        np.testing.assert_allclose(fwd[0], swapped[1], atol=1e-6)
        np.testing.assert_allclose(fwd[1], swapped[0], atol=1e-6)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(7)
        model = VisionTransformer3D(TOY, rng)
        with pytest.raises(ShapeMismatchError):
            model.forward_batch(np.zeros((1, 1, 4, 16, 16), dtype=np.float32))

    def test_gradient_check(self, gradcheck):
        cfg = ViTConfig(channels=1, depth=8, height=16, width=16, patch=(4, 8, 8),
                        layers=2, dim=16, heads=2, dtype=np.float64)
        rng = np.random.default_rng(8)
        model = VisionTransformer3D(cfg, rng)
        vol = np.random.default_rng(4).random((1, 1, 8, 16, 16))
        probe = np.random.default_rng(5).normal(size=(cfg.n_patches + 1, cfg.dim))
        params = [model.patch_proj.weight, model.cls_token, model.pos,
                  model.blocks[0].attn.wq.weight, model.blocks[0].mlp.fc1.weight,
                  model.blocks[1].attn.wv.weight, model.ln_out.weight]
        gradcheck(lambda: (model.forward_batch(vol) * probe).sum(),
                  params, np.random.default_rng(9), eps=1e-3, rel_tol=1e-2)


class TestTextEncoder:
    @pytest.fixture(scope="class")
    def encoder(self):
        return TextEncoder(TextEncoderConfig(layers=2, dim=32, heads=2),
                           np.random.default_rng(10))

    def test_empty_string_cls_only(self, encoder):
        seq = encoder.encode("")
        assert seq.length == 1
        assert seq.roles == ["[CLS]"]

    def test_truncation_to_128(self, encoder):
        text = " ".join(["liver"] * 200)
        seq = encoder.encode(text)
        assert seq.length == 129  # CLS + 128

    def test_deterministic(self, encoder):
        a = encoder.encode("the liver is seen in the upper left region.")
        b = encoder.encode("the liver is seen in the upper left region.")
        np.testing.assert_array_equal(a.array(), b.array())

    def test_padding_does_not_leak_into_cls(self, encoder):
        single, _ = encoder.forward_batch(["short text"])
        batched, lengths = encoder.forward_batch(["short text",
                                                  "a much longer report about the liver and kidney"])
        np.testing.assert_allclose(batched.data[0, 0], single.data[0, 0], atol=1e-5)

    def test_gradient_check(self, gradcheck):
        cfg = TextEncoderConfig(layers=1, dim=16, heads=2, dtype=np.float64)
        enc = TextEncoder(cfg, np.random.default_rng(11))
        probe = np.random.default_rng(6).normal(size=(16,))
        params = [enc.tok_emb.weight, enc.pos, enc.blocks[0].attn.wk.weight,
                  enc.blocks[0].mlp.fc2.weight]
        gradcheck(lambda: (enc.cls_features(["the liver is seen", "a cyst"]) @ probe).sum(),
                  params, np.random.default_rng(12), eps=1e-3, rel_tol=1e-2)
