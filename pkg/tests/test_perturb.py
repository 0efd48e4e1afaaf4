import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chanfree.data import Sample
from chanfree.errors import ConfigurationError
from chanfree.perturb import (KINDS, PerturbationSpec, condition_name, count_for, parse_spec_list, perturb,
                              perturb_all, standard_conditions)


def make_sample(c, seed=0, length=6):
    r = np.random.default_rng(seed)
    # distinct metadata rows so channel identities can be tracked
    meta = np.stack([np.arange(1, c + 1), np.ones(c, int), np.full(c, 2), np.arange(c) % 3 + 1], axis=1)
    return Sample(r.normal(size=(c, length)), meta, 1, 0)


def rows(s):
    return {(tuple(m), tuple(w)) for m, w, ok in zip(s.meta, s.window, s.valid) if ok}


channels = st.integers(1, 40)
intensity = st.floats(0.0, 1.0)
seeds = st.integers(0, 2**31)


@given(channels, st.sampled_from(KINDS), seeds)
def test_zero_intensity_is_identity(c, kind, seed):
    s = make_sample(c, seed)
    out = perturb(s, PerturbationSpec(kind, 0.0, seed))
    assert out is not s
    assert np.array_equal(out.window, s.window) and np.array_equal(out.meta, s.meta)
    assert np.array_equal(out.valid, s.valid) and out.label == s.label


@given(channels, intensity, seeds)
def test_channel_missing_count_and_survivor(c, t, seed):
    s = make_sample(c)
    out = perturb(s, PerturbationSpec("ChannelMissing", t, seed))
    dropped = ~out.valid
    assert dropped.sum() == min(count_for(t, c), c - 1)
    assert not out.window[dropped].any() and not out.meta[dropped].any()
    np.testing.assert_array_equal(out.window[~dropped], s.window[~dropped])


@given(channels, intensity, seeds)
def test_partial_shuffle_moves_waveform_and_metadata_together(c, t, seed):
    s = make_sample(c)
    out = perturb(s, PerturbationSpec("PartialShuffle", t, seed))
    assert rows(out) == rows(s)
    assert (out.meta != s.meta).any(axis=1).sum() <= count_for(t, c)


@given(channels, intensity, seeds)
def test_meta_pad_touches_only_metadata(c, t, seed):
    s = make_sample(c)
    out = perturb(s, PerturbationSpec("MetaPad", t, seed))
    np.testing.assert_array_equal(out.window, s.window)
    padded = (out.meta == 0).all(axis=1)
    assert padded.sum() == count_for(t, c)
    np.testing.assert_array_equal(out.meta[~padded], s.meta[~padded])


@given(channels, intensity, seeds)
def test_shuffle_fixed_meta_keeps_signals_and_permutes_descriptors(c, t, seed):
    s = make_sample(c)
    out = perturb(s, PerturbationSpec("ShuffleFixedMeta", t, seed))
    np.testing.assert_array_equal(out.window, s.window)
    assert sorted(map(tuple, out.meta)) == sorted(map(tuple, s.meta))
    assert (out.meta != s.meta).any(axis=1).sum() <= count_for(t, c)


@given(channels, seeds)
def test_full_shuffle_fixed_meta_is_a_permutation_of_all_rows(c, seed):
    s = make_sample(c)
    out = perturb(s, PerturbationSpec("ShuffleFixedMeta", 1.0, seed))
    assert sorted(map(tuple, out.meta)) == sorted(map(tuple, s.meta))


@given(channels, intensity, intensity, seeds)
def test_shuffle_missing_composes(c, t, t2, seed):
    s = make_sample(c)
    out = perturb(s, PerturbationSpec("ShuffleMissing", t, seed, second=t2))
    assert (~out.valid).sum() == min(count_for(t2, c), c - 1)
    assert rows(out) <= rows(s)
    out2 = perturb(s, PerturbationSpec("ShuffleFixedMetaMissing", t, seed, second=t2))
    np.testing.assert_array_equal(out2.window, s.window)
    assert (out2.meta == 0).all(axis=1).sum() >= count_for(t2, c)


@given(channels, intensity, intensity, seeds, st.sampled_from(["ChannelMissing", "MetaPad"]))
def test_affected_channels_are_nested_across_intensities(c, a, b, seed, kind):
    lo, hi = sorted((a, b))
    s = make_sample(c)

    def hit(t):
        out = perturb(s, PerturbationSpec(kind, t, seed))
        return set(np.flatnonzero((out.meta != s.meta).any(axis=1)))
    assert hit(lo) <= hit(hi)


def test_channel_missing_half_of_forty_masks_twenty():
    s = make_sample(40)
    for seed in range(10):
        assert (~perturb(s, PerturbationSpec("ChannelMissing", 0.5, seed)).valid).sum() == 20


def test_perturb_all_is_deterministic_and_per_sample():
    samples = [make_sample(6, seed=i) for i in range(5)]
    spec = PerturbationSpec("PartialShuffle", 1.0, 3)
    a, b = perturb_all(samples, spec), perturb_all(samples, spec)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.meta, y.meta)
    # identical samples at different positions draw from different streams
    same = [make_sample(6)] * 8
    orders = {tuple(s.meta[:, 0]) for s in perturb_all(same, spec)}
    assert len(orders) > 1


def test_input_sample_is_not_modified():
    s = make_sample(8)
    before = (s.window.copy(), s.meta.copy(), s.valid.copy())
    for kind in KINDS:
        perturb(s, PerturbationSpec(kind, 1.0, 0))
    for x, y in zip(before, (s.window, s.meta, s.valid)):
        np.testing.assert_array_equal(x, y)


def test_spec_validation_and_labels():
    with pytest.raises(ConfigurationError):
        PerturbationSpec("Dropout", 0.5)
    assert PerturbationSpec("MetaPad", 1.7).intensity == 1.0
    assert [condition_name(s) for s in standard_conditions()] == ["Shfl", "Miss", "Shfl+Miss"]
    specs = parse_spec_list("MetaPad:0.3, ShuffleFixedMetaMissing:1+0.5", seed=4)
    assert specs == [PerturbationSpec("MetaPad", 0.3, 4), PerturbationSpec("ShuffleFixedMetaMissing", 1.0, 4, 0.5)]
    assert parse_spec_list("none") == []
    spec = specs[1]
    assert PerturbationSpec.from_config(spec.to_config()) == spec


def test_count_for_tolerates_float_rounding():
    assert count_for(0.3, 10) == 3
    assert count_for(0.5, 40) == 20
    assert count_for(1.0, 7) == 7
