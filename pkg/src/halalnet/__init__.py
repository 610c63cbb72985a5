"""One-shot image verification toolkit.

Segmentation preprocessing, a twin-branch convolutional verifier built on a
small reverse-mode autodiff core, pair-sampled training, control-set
inference, and macro-averaged evaluation metrics.  Heavy convolution kernels
run through a compiled extension when available, with a pure numpy fallback
selected automatically at import.
"""

from . import (
    augment,
    autodiff,
    backbone,
    configfile,
    datakit,
    imaging,
    inference,
    metrics,
    pnm,
    resample,
    seeds,
    siamese,
    training,
)
from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import HalalNetError

__version__ = "0.1.0"

__all__ = [
    "augment",
    "autodiff",
    "backbone",
    "configfile",
    "datakit",
    "imaging",
    "inference",
    "metrics",
    "pnm",
    "resample",
    "seeds",
    "siamese",
    "training",
    "HalalNetError",
    "KERNEL_BACKEND",
    "__version__",
]
