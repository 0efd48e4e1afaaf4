from chanfree.data.csvio import (impute_linear, load_cache, load_csv, load_csv_recordings, save_cache,
                                 write_csv)
from chanfree.data.preprocess import (Recording, StandardizerState, loso_splits, majority_label,
                                      resample_labels, resample_linear, resample_recording, segment_windows,
                                      standardize_apply, standardize_fit)
from chanfree.data.sample import Batch, Sample, collate, iterate_batches
from chanfree.data.synth import SlotSpec, SynthDataset, SynthSpec, fft_peak, shifted_slots, synth_generate

__all__ = [
    "Batch", "Recording", "Sample", "SlotSpec", "StandardizerState", "SynthDataset", "SynthSpec", "collate",
    "fft_peak", "impute_linear", "iterate_batches", "load_cache", "load_csv", "load_csv_recordings",
    "loso_splits", "majority_label", "resample_labels", "resample_linear", "resample_recording", "save_cache",
    "segment_windows", "shifted_slots", "standardize_apply", "standardize_fit", "synth_generate", "write_csv",
]
