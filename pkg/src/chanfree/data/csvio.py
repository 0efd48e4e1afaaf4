"""CSV ingestion and the processed-dataset cache.

A recording CSV has a header row ``timestamp, subject, activity, <channels...>``.
The companion descriptor (see :func:`chanfree.metadata.parse_descriptor`)
lists one row per channel and carries directives::

    # rate_hz: 100
    # label_column: activity
    # subject_column: subject
    # columns: acc_x, acc_y, acc_z

``columns`` names the CSV column of each descriptor index in order; without
it, index ``i`` refers to the ``i``-th column after the reserved ones.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from chanfree.data.preprocess import Recording
from chanfree.data.sample import Sample
from chanfree.errors import DescriptorError, InputError, ParseError
from chanfree.metadata import MetaVocab, meta_array, parse_descriptor, register_metadata

CACHE_VERSION = "chanfree-cache/1"


def _descriptor(descriptor):
    if isinstance(descriptor, (str, Path)):
        return parse_descriptor(descriptor)
    return descriptor


def impute_linear(values: np.ndarray) -> tuple[np.ndarray, slice]:
    """Fill interior non-finite entries of each row by linear interpolation.

    Returns the filled ``(C, T)`` array and the column slice that remains after
    dropping leading/trailing steps where any channel is non-finite.
    """
    values = np.array(values, dtype=np.float64)
    finite = np.isfinite(values)
    good_cols = np.flatnonzero(_interior(finite))
    if good_cols.size == 0:
        raise InputError("channels share no span of finite values")
    start, stop = good_cols[0], good_cols[-1] + 1
    idx = np.arange(values.shape[1])
    for row, ok in zip(values, finite):
        if not ok.all():
            row[~ok] = np.interp(idx[~ok], idx[ok], row[ok])
    return values, slice(int(start), int(stop))


def _interior(finite: np.ndarray) -> np.ndarray:
    """Steps lying strictly between finite values on every row."""
    out = np.ones(finite.shape[1], dtype=bool)
    for ok in finite:
        pos = np.flatnonzero(ok)
        if pos.size == 0:
            return np.zeros(finite.shape[1], dtype=bool)
        row = np.zeros(finite.shape[1], dtype=bool)
        row[pos[0]:pos[-1] + 1] = True
        out &= row
    return out


def _parse_float(text: str, lineno: int, col: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null"):
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"column {col!r}: not a number: {text!r}", lineno) from None


def load_csv_recordings(path, descriptor, vocab: MetaVocab | None = None) -> list[Recording]:
    """Parse a CSV into one :class:`Recording` per subject, in order of appearance."""
    rows_desc, directives = _descriptor(descriptor)
    vocab = vocab if vocab is not None else MetaVocab()
    if "rate_hz" not in directives:
        raise DescriptorError("descriptor lacks a 'rate_hz' directive")
    try:
        rate = float(directives["rate_hz"])
    except ValueError:
        raise DescriptorError(f"bad rate_hz {directives['rate_hz']!r}") from None
    label_col = directives.get("label_column", "activity")
    subject_col = directives.get("subject_column", "subject")
    time_col = directives.get("timestamp_column", "timestamp")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        for needed in (label_col, subject_col):
            if needed not in header:
                raise DescriptorError(f"column {needed!r} missing from {path}")
        reserved = {label_col, subject_col, time_col}
        free = [h for h in header if h not in reserved]
        ordered = sorted(rows_desc, key=lambda r: r.index)
        if "columns" in directives:
            names = [c.strip() for c in directives["columns"].split(",")]
            if len(names) != len(ordered):
                raise DescriptorError("'columns' directive must name one column per descriptor row")
        else:
            if any(r.index >= len(free) or r.index < 0 for r in ordered):
                raise DescriptorError("descriptor index beyond the available channel columns")
            names = [free[r.index] for r in ordered]
        missing = [n for n in names if n not in header]
        if missing:
            raise DescriptorError(f"channel columns missing: {missing}")
        ch_pos = [header.index(n) for n in names]
        lab_pos, sub_pos = header.index(label_col), header.index(subject_col)

        per_subject: dict[str, tuple[list, list]] = {}
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not f.strip() for f in raw):
                continue
            if len(raw) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(raw)}", lineno)
            try:
                label = int(float(raw[lab_pos]))
            except ValueError:
                raise ParseError(f"bad label {raw[lab_pos]!r}", lineno) from None
            vals = [_parse_float(raw[p], lineno, header[p]) for p in ch_pos]
            series, labels = per_subject.setdefault(raw[sub_pos].strip(), ([], []))
            series.append(vals)
            labels.append(label)

    metas = meta_array(register_metadata(ordered, vocab))
    out = []
    for subject, (series, labels) in per_subject.items():
        data, keep = impute_linear(np.asarray(series, dtype=np.float64).T)
        subj = int(subject) if subject.lstrip("-").isdigit() else subject
        out.append(Recording(subj, data[:, keep], rate, metas, np.asarray(labels)[keep], list(names)))
    return out


def load_csv(path, descriptor, vocab: MetaVocab | None = None) -> Recording:
    """Parse a single-subject CSV file into a :class:`Recording`."""
    recs = load_csv_recordings(path, descriptor, vocab)
    if len(recs) != 1:
        raise InputError(f"expected one subject in {path}, found {len(recs)}; use load_csv_recordings")
    return recs[0]


def write_csv(path, recordings, channel_names=None, rate_hz: float | None = None):
    """Write recordings (sharing a channel layout) to one CSV file."""
    recordings = list(recordings)
    c = recordings[0].series.shape[0]
    names = channel_names or recordings[0].channel_names or [f"ch{i}" for i in range(c)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "subject", "activity", *names])
        for rec in recordings:
            rate = rate_hz or rec.rate_hz
            for t in range(rec.series.shape[1]):
                w.writerow([f"{t / rate:.4f}", rec.subject, int(rec.labels[t]),
                            *(repr(float(v)) for v in rec.series[:, t])])


def save_cache(path, samples, config_hash: str, vocab: MetaVocab | None = None):
    """Store samples in one ``.npz`` with a version tag and the producing config hash."""
    counts = np.array([s.n_channels for s in samples], dtype=np.int64)
    header = {"version": CACHE_VERSION, "config_hash": config_hash,
              "vocab": vocab.to_dict() if vocab else None,
              "subjects": [s.subject for s in samples]}
    np.savez_compressed(
        path,
        header=np.array(json.dumps(header)),
        windows=np.concatenate([s.window for s in samples]),
        meta=np.concatenate([s.meta for s in samples]),
        valid=np.concatenate([s.valid for s in samples]),
        counts=counts,
        labels=np.array([s.label for s in samples], dtype=np.int64),
    )


def load_cache(path, config_hash: str):
    """Samples and vocabulary from a cache, or ``None`` if absent, stale or from another version."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("version") != CACHE_VERSION or header.get("config_hash") != config_hash:
            return None
        bounds = np.concatenate([[0], np.cumsum(z["counts"])])
        windows, meta, valid, labels = z["windows"], z["meta"], z["valid"], z["labels"]
        samples = [Sample(windows[a:b], meta[a:b], int(y), subj, valid[a:b])
                   for a, b, y, subj in zip(bounds[:-1], bounds[1:], labels, header["subjects"])]
    vocab = MetaVocab.from_dict(header["vocab"]) if header.get("vocab") else None
    return samples, vocab
