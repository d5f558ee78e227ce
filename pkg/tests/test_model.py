"""Model construction, forward, and CAM tests."""

import numpy as np
import pytest

import altfreeze as af
from altfreeze.model import BlockSpec, ModelSpec, StemSpec, cam

# Independent enumeration of the reference tiny architecture: every
# parameter tensor with its shape, written out by hand.
EXPECTED_PARAMS = [
    ("stem.conv_s.weight", (8, 3, 1, 3, 3)),
    ("stem.bn_s.gamma", (8,)),
    ("stem.bn_s.beta", (8,)),
    ("stem.conv_t.weight", (8, 8, 3, 1, 1)),
    ("stem.bn_t.gamma", (8,)),
    ("stem.bn_t.beta", (8,)),
    ("block1.conv_reduce.weight", (8, 8, 1, 1, 1)),
    ("block1.bn_reduce.gamma", (8,)),
    ("block1.bn_reduce.beta", (8,)),
    ("block1.conv_t.weight", (8, 8, 3, 1, 1)),
    ("block1.bn_t.gamma", (8,)),
    ("block1.bn_t.beta", (8,)),
    ("block1.conv_s.weight", (8, 8, 1, 3, 3)),
    ("block1.bn_s.gamma", (8,)),
    ("block1.bn_s.beta", (8,)),
    ("block1.conv_expand.weight", (16, 8, 1, 1, 1)),
    ("block1.bn_expand.gamma", (16,)),
    ("block1.bn_expand.beta", (16,)),
    ("block1.conv_proj.weight", (16, 8, 1, 1, 1)),
    ("block1.bn_proj.gamma", (16,)),
    ("block1.bn_proj.beta", (16,)),
    ("block2.conv_reduce.weight", (16, 16, 1, 1, 1)),
    ("block2.bn_reduce.gamma", (16,)),
    ("block2.bn_reduce.beta", (16,)),
    ("block2.conv_t.weight", (16, 16, 3, 1, 1)),
    ("block2.bn_t.gamma", (16,)),
    ("block2.bn_t.beta", (16,)),
    ("block2.conv_s.weight", (16, 16, 1, 3, 3)),
    ("block2.bn_s.gamma", (16,)),
    ("block2.bn_s.beta", (16,)),
    ("block2.conv_expand.weight", (32, 16, 1, 1, 1)),
    ("block2.bn_expand.gamma", (32,)),
    ("block2.bn_expand.beta", (32,)),
    ("block2.conv_proj.weight", (32, 16, 1, 1, 1)),
    ("block2.bn_proj.gamma", (32,)),
    ("block2.bn_proj.beta", (32,)),
    ("head.weight", (1, 32)),
    ("head.bias", (1,)),
]


class TestBuildModel:
    def test_deterministic_initialization(self, ref_spec):
        a = af.build_model(ref_spec, seed=7)
        b = af.build_model(ref_spec, seed=7)
        for (na, ta), (nb, tb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data)

    def test_seed_changes_weights(self, ref_spec):
        a = af.build_model(ref_spec, seed=0)
        b = af.build_model(ref_spec, seed=1)
        assert not np.array_equal(a.param_tensors()["stem.conv_s.weight"].data,
                                  b.param_tensors()["stem.conv_s.weight"].data)

    def test_parameter_enumeration_matches_hand_list(self, ref_spec):
        model = af.build_model(ref_spec, seed=0)
        got = [(p.name, p.shape) for p, _ in model.named_params()]
        assert got == EXPECTED_PARAMS

    def test_parameter_count_matches_hand_sum(self, ref_spec):
        model = af.build_model(ref_spec, seed=0)
        expected = sum(int(np.prod(s)) for _, s in EXPECTED_PARAMS)
        assert model.num_params() == expected == 6249

    def test_names_unique(self, ref_spec):
        names = [p.name for p, _ in af.build_model(ref_spec, seed=0).named_params()]
        assert len(names) == len(set(names))

    def test_full_3d_kernel_rejected(self):
        spec = ModelSpec(
            input_shape=(3, 8, 32, 32),
            stem=StemSpec(out_channels=8),
            blocks=(BlockSpec(8, 8, 16, spatial_stride=2, has_projection=True,
                              temporal_kernel=(3, 3, 3)),),
            head_width=16,
        )
        with pytest.raises(ValueError, match="temporal"):
            af.build_model(spec, seed=0)

    def test_missing_projection_rejected(self):
        spec = ModelSpec(
            input_shape=(3, 8, 32, 32),
            stem=StemSpec(out_channels=8),
            blocks=(BlockSpec(8, 8, 16, spatial_stride=1, has_projection=False),),
            head_width=16,
        )
        with pytest.raises(ValueError, match="projection"):
            af.build_model(spec, seed=0)

    def test_channel_chain_validated(self):
        spec = ModelSpec(
            input_shape=(3, 8, 32, 32),
            stem=StemSpec(out_channels=8),
            blocks=(BlockSpec(4, 8, 16, has_projection=True),),
            head_width=16,
        )
        with pytest.raises(ValueError, match="in_channels"):
            af.build_model(spec, seed=0)

    def test_head_width_validated(self):
        spec = ModelSpec(
            input_shape=(3, 8, 32, 32),
            stem=StemSpec(out_channels=8),
            blocks=(BlockSpec(8, 8, 16, has_projection=True),),
            head_width=99,
        )
        with pytest.raises(ValueError, match="head width"):
            af.build_model(spec, seed=0)


class TestForward:
    def test_output_shape_and_range(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=0)
        x = np.random.default_rng(0).random((2,) + tiny_spec.input_shape).astype(np.float32)
        out = model.forward(x, mode="eval")
        assert out.shape == (2,)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_zero_head_gives_half(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=0)
        model.head.weight.data[...] = 0
        model.head.bias.data[...] = 0
        x = np.random.default_rng(1).random((3,) + tiny_spec.input_shape).astype(np.float32)
        out = model.forward(x, mode="eval")
        np.testing.assert_array_equal(out.data, [0.5, 0.5, 0.5])

    def test_eval_is_pure_and_batch_order_invariant(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=2)
        rng = np.random.default_rng(2)
        a = rng.random(tiny_spec.input_shape).astype(np.float32)
        b = rng.random(tiny_spec.input_shape).astype(np.float32)
        p1 = model.forward(np.stack([a, b]), mode="eval").data
        p2 = model.forward(np.stack([b, a]), mode="eval").data
        assert p1[0] == p2[1] and p1[1] == p2[0]
        # different batch sizes may change BLAS reduction order: tolerance
        p3 = model.forward(np.stack([b, a, a]), mode="eval").data
        np.testing.assert_allclose(p3, [p1[1], p1[0], p1[0]], rtol=1e-5)
        assert p3[1] == p3[2]

    def test_duplicated_sample_same_probability(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=3)
        clip = np.random.default_rng(3).random(tiny_spec.input_shape).astype(np.float32)
        out = model.forward(np.stack([clip, clip]), mode="eval").data
        assert out[0] == out[1]

    def test_shape_mismatch_rejected(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=0)
        with pytest.raises(ValueError, match="forward expects"):
            model.forward(np.zeros((2, 3, 8, 8, 8), dtype=np.float32))

    def test_bad_mode_rejected(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=0)
        x = np.zeros((1,) + tiny_spec.input_shape, dtype=np.float32)
        with pytest.raises(ValueError, match="mode"):
            model.forward(x, mode="test")

    def test_train_mode_is_taped(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=0)
        x = np.random.default_rng(4).random((2,) + tiny_spec.input_shape).astype(np.float32)
        out = model.forward(x, mode="train")
        assert out.requires_grad
        grads = af.backward(af.bce_loss(out, np.array([0.0, 1.0])))
        assert model.param_tensors()["stem.conv_s.weight"] in grads


class TestCam:
    def test_heatmap_shape_and_range(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=1)
        clip = np.random.default_rng(5).random(tiny_spec.input_shape).astype(np.float32)
        heat = cam(model, clip)
        assert heat.shape == (8, 4, 4)  # stem /2, block1 /2 on a 16x16 input
        assert heat.min() >= 0.0 and heat.max() <= 1.0

    def test_zero_head_gives_zero_map(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=1)
        model.head.weight.data[...] = 0
        clip = np.random.default_rng(6).random(tiny_spec.input_shape).astype(np.float32)
        heat = cam(model, clip)
        assert np.array_equal(heat, np.zeros_like(heat))

    def test_model_without_head_rejected(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=1)
        model.head = None
        clip = np.zeros(tiny_spec.input_shape, dtype=np.float32)
        with pytest.raises(ValueError, match="head"):
            cam(model, clip)

    def test_wrong_clip_shape_rejected(self, tiny_spec):
        model = af.build_model(tiny_spec, seed=1)
        with pytest.raises(ValueError, match="single clip"):
            cam(model, np.zeros((3, 8, 8, 8), dtype=np.float32))


def test_cam_mass_concentrates_on_blend_region():
    """A model trained on blend-only fakes should attend the planted region.

    Trains briefly on a spatial-artifact set and compares mean normalized
    heatmap mass inside the (upsampling-aligned) mask region against outside,
    averaged over probe fakes.
    """
    shape = (3, 8, 16, 16)
    spec = af.DatasetSpec(clip_shape=shape, seed=11, train_real=0, train_fake=0,
                          probe_real=28, probe_fake=28)
    train_ds = af.build_spatial_set(spec)
    cfg = af.TrainConfig(batch_size=8, epochs=40, lr=0.05, seed=0, freezing=False,
                         flip=False, cutout=False, noise=False, fake_clip_augs=False)
    model = af.build_model(af.reference_model_spec(shape), seed=0)
    af.train(model, train_ds, cfg)

    eval_spec = af.DatasetSpec(clip_shape=shape, seed=12, train_real=0, train_fake=0,
                               probe_real=10, probe_fake=10)
    probe = af.build_spatial_set(eval_spec)
    inside, outside = [], []
    for i in np.flatnonzero(probe.labels == 1):
        fg_tag, bg_tag = probe.seeds[i].split("|")
        fg = af.gen_real_clip(af.data.parse_seed_tag(fg_tag), shape)
        bg = af.gen_real_clip(af.data.parse_seed_tag(bg_tag), shape)
        # recover the blend mask from the stored fake (pixels where sources differ)
        denom = (fg - bg)[:, 0]
        numer = (probe.clips[i] - bg)[:, 0]
        valid = np.abs(denom) > 0.05
        mask_est = np.zeros(shape[2:])
        weight = np.zeros(shape[2:])
        for c in range(3):
            mask_est += np.where(valid[c], numer[c] / np.where(valid[c], denom[c], 1.0), 0.0)
            weight += valid[c]
        mask = mask_est / np.maximum(weight, 1.0)
        heat = cam(model, probe.clips[i]).mean(axis=0)  # [H', W']
        hh, ww = heat.shape
        block = (shape[2] // hh, shape[3] // ww)
        mask_small = mask.reshape(hh, block[0], ww, block[1]).mean(axis=(1, 3))
        sel = mask_small > 0.5
        if sel.any() and (~sel).any():
            inside.append(heat[sel].mean())
            outside.append(heat[~sel].mean())
    assert len(inside) >= 5
    assert np.mean(inside) > np.mean(outside)
