"""Prompt-alignment training pipeline for a frozen dual encoder.

Learnable textual context vectors and per-layer visual prompt tokens adapt a
frozen text/image transformer pair to synthetic classification data, guided by
soft-hard prompt alignment, prototype anchoring and top-k sparse global-local
cross-modal alignment.
"""

from .tensor import Tape, Tensor, finite_difference_grad

__all__ = ["Tape", "Tensor", "finite_difference_grad"]
__version__ = "0.1.0"
