import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from chanfree.autodiff import Tensor, functional as F, no_grad
from chanfree.errors import ConfigurationError, InputError
from chanfree.metadata import CBN
from chanfree.models import (BackboneConfig, ChannelFeatures, ChannelFreeModel, FixedChannelBaseline,
                             SlotFusionModel, channel_summaries, combination_loss, fuse_mean, make_model, slot_mix)

TINY = BackboneConfig(num_blocks=2, base_channels=2)


def batch(rng, b=3, c=4, length=16):
    x = rng.normal(size=(b, c, length))
    meta = rng.integers(1, 3, size=(b, c, 4))
    mask = np.ones((b, c), dtype=bool)
    return x, meta, mask


def warmed(model, x, meta, mask):
    model.train()
    with no_grad():
        model.predict(x, meta, mask)
    model.eval()
    return model


def test_backbone_shapes_and_feature_dim(rng):
    m = ChannelFreeModel(3, TINY, seed=0)
    x, meta, mask = batch(rng)
    out = m(x, meta, mask)
    assert out.y_fused.shape == (3, 3)
    assert out.y_channel.shape == (3, 4, 3)
    assert out.z_bar.shape == (3, TINY.feature_dim)


def test_masked_channels_do_not_affect_output(rng):
    m = warmed(ChannelFreeModel(3, TINY, use_meta=True, vocab_sizes=(3, 3, 3, 3), seed=1), *batch(rng))
    x, meta, mask = batch(rng)
    mask[:, 1] = False
    base = m.predict(x, meta, mask).data
    x2, meta2 = x.copy(), meta.copy()
    x2[:, 1] = 1e3 * rng.normal(size=x2[:, 1].shape)
    meta2[:, 1] = 2
    np.testing.assert_array_equal(m.predict(x2, meta2, mask).data, base)
    # dropping the channel entirely is the same as masking it
    keep = [0, 2, 3]
    np.testing.assert_allclose(m.predict(x[:, keep], meta[:, keep], mask[:, keep]).data, base, atol=1e-12)


def test_variable_channel_counts_share_one_model(rng):
    m = warmed(ChannelFreeModel(2, TINY, seed=0), *batch(rng))
    for c in (1, 3, 9):
        assert m.predict(rng.normal(size=(2, c, 16))).shape == (2, 2)


def test_all_masked_sample_is_rejected(rng):
    m = ChannelFreeModel(2, TINY)
    x, meta, mask = batch(rng)
    mask[0] = False
    with pytest.raises(InputError):
        m(x, meta, mask)


def test_metadata_id_out_of_table_is_rejected(rng):
    m = ChannelFreeModel(2, TINY, use_meta=True, vocab_sizes=(3, 3, 3, 3))
    x, meta, mask = batch(rng)
    meta[0, 0, 2] = 3
    with pytest.raises(InputError):
        m(x, meta, mask)


def test_cbn_sits_in_every_block_norm_but_not_the_stem():
    m = ChannelFreeModel(2, TINY, use_meta=True, vocab_sizes=(2, 2, 2, 2))
    cbn = [mod for mod in m.encoder.blocks[0].modules() if isinstance(mod, CBN)]
    assert len(cbn) == 3  # two main-path norms plus the projection shortcut
    assert not isinstance(m.encoder.stem_norm, CBN)


def test_fuse_mean_matches_oracle(rng):
    z = rng.normal(size=(4, 5, 3))
    mask = rng.random((4, 5)) < 0.6
    mask[:, 0] = True
    got = fuse_mean(ChannelFeatures(Tensor(z * mask[:, :, None]), mask)).data
    np.testing.assert_allclose(got, oracles.masked_mean(z, mask), atol=1e-14)


def test_combination_loss_endpoints_and_mix(rng):
    m = ChannelFreeModel(3, TINY, seed=2)
    x, meta, mask = batch(rng)
    mask[1, 2:] = False
    labels = np.array([0, 2, 1])
    out = m(x, meta, mask)
    t = combination_loss(out, labels, mask, 0.3)
    assert t.fused.item() == pytest.approx(oracles.cross_entropy(out.y_fused.data, labels), abs=1e-12)
    # per-sample mean over valid channels, then mean over the batch
    per = []
    for i in range(3):
        rows = [j for j in range(4) if mask[i, j]]
        per.append(np.mean([oracles.cross_entropy(out.y_channel.data[i, [j]], [labels[i]]) for j in rows]))
    assert t.dist.item() == pytest.approx(np.mean(per), abs=1e-12)
    assert t.comb.item() == pytest.approx(0.3 * t.fused.item() + 0.7 * t.dist.item(), abs=1e-12)
    with pytest.raises(ConfigurationError):
        combination_loss(out, labels, mask, 1.5)


def test_parameter_count_does_not_depend_on_channels():
    for kind in ("lf", "ours", "ef", "mf"):
        m = make_model(kind, 4, backbone=TINY, vocab_sizes=(3, 3, 3, 3))
        counts = {m.num_parameters() for _ in (6, 12, 40)}
        assert len(counts) == 1
    assert (make_model("baseline", 4, n_channels=6, backbone=TINY).num_parameters()
            < make_model("baseline", 4, n_channels=40, backbone=TINY).num_parameters())


def test_backbone_macs_scale_linearly():
    for kind in ("lf", "ours"):
        m = make_model(kind, 4, backbone=TINY, vocab_sizes=(3, 3, 3, 3))
        for c in (1, 3, 20):
            assert m.backbone_macs(2 * c, 64) == 2 * m.backbone_macs(c, 64)


def test_conv_mac_count_by_hand():
    cfg = BackboneConfig(num_blocks=1, base_channels=2, kernel=3, stride=2)
    m = FixedChannelBaseline(3, 2, cfg)
    # stem 3->2 on 16 -> 8; block conv1 2->2 stride 2 -> 4; conv2 on 4; strided 1x1 shortcut 8 -> 4; head
    expected = 2 * 3 * 3 * 8 + 2 * 2 * 3 * 4 + 2 * 2 * 3 * 4 + 2 * 2 * 1 * 4 + 2 * 2
    assert m.macs(3, 16) == expected


def test_fixed_baseline_rejects_other_channel_counts(rng):
    m = FixedChannelBaseline(4, 2, TINY)
    with pytest.raises(InputError):
        m.predict(rng.normal(size=(1, 5, 16)))


def test_channel_summaries(rng):
    x = rng.normal(size=(2, 3, 10))
    s = channel_summaries(x)
    assert s.shape == (2, 3, 5)
    np.testing.assert_allclose(s[1, 2], [x[1, 2].mean(), x[1, 2].std(), x[1, 2].max(), x[1, 2].min(),
                                         (x[1, 2] ** 2).mean()])


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.integers(0, 9999))
def test_slot_mix_matches_oracle(b, k, c, seed):
    r = np.random.default_rng(seed)
    A, h = r.random((b, k, c)), r.normal(size=(b, c, 2, 3))
    np.testing.assert_allclose(slot_mix(Tensor(A), Tensor(h)).data, oracles.slot_mix(A, h), atol=1e-12)


def test_slot_assignment_is_normalized_over_valid_channels(rng):
    m = SlotFusionModel(3, "early", TINY, n_slots=4)
    x = rng.normal(size=(2, 5, 16))
    mask = np.ones((2, 5), dtype=bool)
    mask[0, 3:] = False
    A = m.slots(channel_summaries(x), mask).A.data
    assert A.shape == (2, 4, 5)
    np.testing.assert_allclose(A.sum(-1), 1.0, atol=1e-12)
    assert np.all(A[0, :, 3:] == 0)


@pytest.mark.parametrize("stage", ["early", "middle"])
def test_slot_fusion_is_permutation_invariant(rng, stage):
    m = warmed(SlotFusionModel(3, stage, TINY, n_slots=3), *batch(rng))
    x = rng.normal(size=(2, 5, 16))
    perm = rng.permutation(5)
    np.testing.assert_allclose(m.predict(x[:, perm]).data, m.predict(x).data, atol=1e-10)


@pytest.mark.parametrize("kind", ["lf", "ours"])
def test_lambda_one_leaves_aux_head_without_gradient(rng, kind):
    m = make_model(kind, 3, backbone=TINY, vocab_sizes=(3, 3, 3, 3))
    x, meta, mask = batch(rng)
    labels = np.array([0, 1, 2])
    terms = combination_loss(m(x, meta, mask), labels, mask, 1.0)
    terms.comb.backward()
    for p in m.aux_head.parameters():
        assert p.grad is not None and not p.grad.any()
    assert m.fused_head.weight.grad.any()


def test_grow_vocab(rng):
    m = ChannelFreeModel(2, TINY, use_meta=True, vocab_sizes=(2, 2, 2, 2))
    m.grow_vocab((5, 2, 3, 2))
    assert m.meta_encoder.vocab_sizes() == (5, 2, 3, 2)


def test_make_model_kinds():
    assert make_model("lf_comb", 2, backbone=TINY).kind == "lf_comb"
    assert make_model("mf", 2, backbone=TINY).kind == "mf"
    with pytest.raises(ConfigurationError):
        make_model("baseline", 2, backbone=TINY)
    with pytest.raises(ConfigurationError):
        make_model("transformer", 2)


def test_float32_forward_runs(rng):
    m = warmed(ChannelFreeModel(2, TINY, seed=0, dtype=np.float32), *batch(rng))
    assert m.predict(rng.normal(size=(2, 3, 16))).data.dtype == np.float32


def test_linear_head_matches_manual(rng):
    m = ChannelFreeModel(2, TINY)
    z = Tensor(rng.normal(size=(3, TINY.feature_dim)))
    np.testing.assert_allclose(m.fused_head(z).data,
                               F.linear(z, m.fused_head.weight, m.fused_head.bias).data, atol=0)
