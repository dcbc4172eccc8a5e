"""Streaming Conformer encoder variants, attention masking experiments,
transducer losses and an encoder-only RTF benchmark harness."""

from .kernels import HAVE_COMPILED

__all__ = ["HAVE_COMPILED"]
__version__ = "0.1.0"
