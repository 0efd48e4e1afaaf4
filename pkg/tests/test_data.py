import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from chanfree.data import (Recording, Sample, SynthSpec, collate, fft_peak, impute_linear, load_cache,
                           load_csv, load_csv_recordings, loso_splits, majority_label, resample_labels,
                           resample_linear, save_cache, segment_windows, shifted_slots, standardize_apply,
                           standardize_fit, synth_generate, write_csv)
from chanfree.errors import DescriptorError, InputError, ParseError
from chanfree.metadata import ChannelDescriptor, MetaVocab, write_descriptor


def test_resample_linear_hits_known_points():
    x = np.arange(0, 50, dtype=float)[None] * 2.0  # 50 Hz ramp, value = 2 * index
    out = resample_linear(x, 50.0, 100.0)
    assert out.shape == (1, 99)
    # a ramp is reproduced exactly by linear interpolation
    np.testing.assert_allclose(out[0], np.arange(99) * 1.0, atol=1e-12)
    np.testing.assert_array_equal(resample_linear(x, 100.0, 100.0), x)
    with pytest.raises(InputError):
        resample_linear(x, 0.0)


def test_resample_labels_nearest_previous():
    labels = np.array([1, 1, 2, 2, 3])
    np.testing.assert_array_equal(resample_labels(labels, 50.0, 100.0), [1, 1, 1, 1, 2, 2, 2, 2, 3])


def test_majority_label_threshold_and_ties():
    assert majority_label(np.array([1, 1, 2])) == 1
    assert majority_label(np.array([2, 1, 1, 2])) == 1  # tie goes to the lower id
    assert majority_label(np.array([0, 1, 2, 3])) is None


def make_recording(subject=0, c=2, t=1000, rate=100.0, seed=0):
    r = np.random.default_rng(seed)
    labels = (np.arange(t) // 250) % 3
    return Recording(subject, r.normal(size=(c, t)), rate, np.tile([1, 0, 1, 1], (c, 1)), labels)


def test_segment_windows_counts_and_labels():
    rec = make_recording(t=1000)
    wins = segment_windows(rec, 256)
    assert len(wins) == 3  # 1000 // 256, remainder dropped
    assert [w.label for w in wins] == [0, 1, 2]
    assert len(segment_windows(rec, 256, stride=128)) == (1000 - 256) // 128 + 1
    np.testing.assert_array_equal(wins[1].window, rec.series[:, 256:512])


def test_standardize_matches_oracle():
    r = np.random.default_rng(3)
    samples = [Sample(r.normal(loc=i, size=(2, 8)), [[1, 0, 1, i % 2 + 1], [2, 0, 1, 1]], 0, i) for i in range(5)]
    state = standardize_fit(samples)
    groups: dict = {}
    for s in samples:
        for key, row in zip(s.channel_keys(), s.window):
            groups.setdefault(key, []).append(row)
    ref = oracles.standardize(groups)
    assert set(state.stats) == set(ref)
    for key, (mu, sd) in ref.items():
        assert state.stats[key][0] == pytest.approx(mu, abs=1e-12)
        assert state.stats[key][1] == pytest.approx(sd, abs=1e-12)
    out = standardize_apply(state, samples)
    mu, sd = state.stats[(2, 0, 1, 1)]
    np.testing.assert_allclose(out[3].window[1], (samples[3].window[1] - mu) / sd)


def test_standardize_ignores_invalid_channels():
    s = Sample(np.array([[1.0, 3.0], [100.0, 200.0]]), [[1, 0, 0, 0], [1, 0, 0, 0]], 0, valid=[True, False])
    state = standardize_fit([s])
    assert state.stats[(1, 0, 0, 0)] == (2.0, 1.0)


@pytest.mark.parametrize("n_subjects", [5, 7, 9])
def test_loso_folds_partition_subjects(n_subjects):
    samples = [Sample(np.zeros((1, 4)), [[0, 0, 0, 0]], 0, subj) for subj in range(n_subjects) for _ in range(3)]
    folds = loso_splits(samples)
    assert len(folds) == n_subjects
    for subject, train, test in folds:
        assert {s.subject for s in test} == {subject}
        assert subject not in {s.subject for s in train}
        assert len(train) + len(test) == len(samples)


def test_loso_needs_two_subjects():
    with pytest.raises(InputError):
        loso_splits([Sample(np.zeros((1, 4)), [[0, 0, 0, 0]], 0, 0)])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30), st.data())
def test_impute_matches_oracle(values, data):
    arr = np.array(values)
    n = len(arr)
    holes = data.draw(st.sets(st.integers(1, n - 2), max_size=n - 2))
    arr[list(holes)] = np.nan
    filled, keep = impute_linear(arr[None])
    assert keep == slice(0, n)
    np.testing.assert_allclose(filled[0], oracles.interp_linear(arr), atol=1e-12)


def test_impute_trims_leading_and_trailing_gaps():
    arr = np.array([[np.nan, 1.0, 2.0, 3.0, 4.0], [0.0, 1.0, np.nan, 3.0, np.nan]])
    filled, keep = impute_linear(arr)
    assert keep == slice(1, 4)
    np.testing.assert_allclose(filled[1, 1:4], [1.0, 2.0, 3.0])


def write_dataset(tmp_path, rate=50.0, with_nan=False):
    recs = [make_recording(subject=s, c=3, t=600, rate=rate, seed=s) for s in (1, 2)]
    if with_nan:
        recs[0].series[1, 10] = np.nan
    names = ["a_x", "a_y", "g_z"]
    write_csv(tmp_path / "d.csv", recs, names, rate)
    rows = [ChannelDescriptor(0, "wrist", "left", "acc", "x"), ChannelDescriptor(1, "wrist", "left", "acc", "y"),
            ChannelDescriptor(2, "ankle", None, "gyro", "z")]
    write_descriptor(tmp_path / "d.desc", rows, {"rate_hz": rate, "columns": ", ".join(names)})
    return recs


def test_csv_round_trip(tmp_path):
    recs = write_dataset(tmp_path)
    vocab = MetaVocab()
    loaded = load_csv_recordings(tmp_path / "d.csv", tmp_path / "d.desc", vocab)
    assert [r.subject for r in loaded] == [1, 2]
    np.testing.assert_allclose(loaded[0].series, recs[0].series, atol=0)
    np.testing.assert_array_equal(loaded[1].labels, recs[1].labels)
    assert loaded[0].meta.tolist() == [[1, 1, 1, 1], [1, 1, 1, 2], [2, 0, 2, 3]]
    assert loaded[0].rate_hz == 50.0


def test_csv_nan_is_imputed(tmp_path):
    recs = write_dataset(tmp_path, with_nan=True)
    rec = load_csv_recordings(tmp_path / "d.csv", tmp_path / "d.desc")[0]
    s = recs[0].series[1]
    assert rec.series[1, 10] == pytest.approx((s[9] + s[11]) / 2, abs=1e-12)


def test_csv_errors(tmp_path):
    write_dataset(tmp_path)
    with pytest.raises(InputError):
        load_csv(tmp_path / "d.csv", tmp_path / "d.desc")  # two subjects
    (tmp_path / "bad.desc").write_text("index, location, side, sensor, axis\n0, wrist, -, acc, x\n")
    with pytest.raises(DescriptorError):
        load_csv_recordings(tmp_path / "d.csv", tmp_path / "bad.desc")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 1)[0] + ",oops"
    (tmp_path / "broken.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_csv_recordings(tmp_path / "broken.csv", tmp_path / "d.desc")
    assert err.value.line == 6


def test_cache_round_trip_and_invalidation(tmp_path):
    r = np.random.default_rng(0)
    samples = [Sample(r.normal(size=(c, 8)), np.ones((c, 4), dtype=int), i % 2, f"s{i}") for i, c in
               enumerate((2, 3, 1))]
    vocab = MetaVocab()
    vocab.register("wrist")
    path = tmp_path / "c.npz"
    save_cache(path, samples, "abc", vocab)
    got, got_vocab = load_cache(path, "abc")
    assert got_vocab == vocab
    for a, b in zip(samples, got):
        np.testing.assert_array_equal(a.window, b.window)
        assert (a.label, a.subject) == (b.label, b.subject)
    assert load_cache(path, "other") is None
    assert load_cache(tmp_path / "missing.npz", "abc") is None


def test_collate_pads_and_masks():
    a = Sample(np.ones((2, 4)), np.ones((2, 4), dtype=int), 1)
    b = Sample(np.ones((3, 4)), np.ones((3, 4), dtype=int), 0, valid=[True, False, True])
    batch = collate([a, b])
    assert batch.x.shape == (2, 3, 4)
    np.testing.assert_array_equal(batch.mask, [[True, True, False], [True, False, True]])
    assert batch.meta[0, 2].tolist() == [0, 0, 0, 0]
    with pytest.raises(InputError):
        collate([a, Sample(np.ones((2, 5)), np.ones((2, 4), dtype=int), 0)])


def test_synth_is_deterministic_and_balanced():
    spec = SynthSpec(n_subjects=2, windows_per_subject=8)
    a, b = synth_generate(spec, 7), synth_generate(spec, 7)
    for s, t in zip(a.samples, b.samples):
        np.testing.assert_array_equal(s.window, t.window)
    assert not np.array_equal(synth_generate(spec, 8).samples[0].window, a.samples[0].window)
    labels = [s.label for s in a.by_subject(0)]
    assert sorted(labels) == [0, 0, 1, 1, 2, 2, 3, 3]


def test_synth_frequencies_follow_class_map():
    spec = SynthSpec(n_subjects=1, windows_per_subject=8, noise=0.0, freq_jitter=0.0, amp_jitter=0.0,
                     slots=shifted_slots((0, 1), 4))
    ds = synth_generate(spec, 0)
    for s in ds.samples:
        peaks = fft_peak(s.window, spec.rate_hz)
        resolution = spec.rate_hz / spec.length
        assert abs(peaks[0] - spec.freqs[s.label]) <= resolution
        assert abs(peaks[1] - spec.freqs[(s.label + 1) % 4]) <= resolution


def test_synth_variable_channel_counts():
    ds = synth_generate(SynthSpec(n_subjects=1, windows_per_subject=20, channels=(2, 4)), 0)
    counts = {s.n_channels for s in ds.samples}
    assert counts <= {2, 3, 4} and len(counts) > 1
    for s in ds.samples:
        assert [tuple(r) for r in s.meta] == [tuple(ds.slot_ids[j]) for j in s.tags["slots"]]


def test_synth_to_csv_to_windows(tmp_path):
    spec = SynthSpec(n_subjects=2, windows_per_subject=4, slots=shifted_slots((0, 1), 4))
    ds = synth_generate(spec, 0)
    recs = []
    for subj in (0, 1):
        wins = ds.by_subject(subj)
        recs.append(Recording(subj, np.concatenate([w.window for w in wins], axis=1), spec.rate_hz, wins[0].meta,
                              np.repeat([w.label for w in wins], spec.length)))
    write_csv(tmp_path / "s.csv", recs, ["c0", "c1"], spec.rate_hz)
    write_descriptor(tmp_path / "s.desc", [ChannelDescriptor(0, "loc0", None, "acc", "x"),
                                           ChannelDescriptor(1, "loc0", None, "acc", "y")], {"rate_hz": 100})
    back = [w for r in load_csv_recordings(tmp_path / "s.csv", tmp_path / "s.desc") for w in segment_windows(r)]
    assert len(back) == len(ds.samples)
    for a, b in zip(ds.samples, back):
        np.testing.assert_allclose(b.window, a.window, atol=0)
        assert a.label == b.label
