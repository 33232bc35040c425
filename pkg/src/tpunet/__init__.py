"""Temporal-prompt UNet segmentation on a synthetic timestamped-slice benchmark.

A from-scratch float64 autodiff engine drives a small multimodal
pipeline: templated temporal prompts, a trainable text encoder,
contrastive image/text alignment, joint-sequence attention fusion, and
a UNet segmenter, plus the data generator and training harness that
make the temporal-information benefit measurable.
"""

from .tensor import Tensor

__version__ = "0.1.0"
__all__ = ["Tensor", "__version__"]
