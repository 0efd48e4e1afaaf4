"""Channel-free activity recognition: shared per-channel encoding with metadata-conditioned normalization."""

__version__ = "0.1.0"
