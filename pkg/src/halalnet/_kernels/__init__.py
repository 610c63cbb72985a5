"""Hot conv/pool kernels: compiled extension if built, pure numpy otherwise.

Set HALALNET_PURE=1 to force the fallback (used by the benchmark and by
tests that compare both backends).
"""

import os

from . import fallback

if os.environ.get("HALALNET_PURE", "") not in ("", "0"):
    _impl = fallback
else:
    try:
        from . import convops as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = fallback

BACKEND = "pure" if _impl is fallback else "compiled"

im2col = _impl.im2col
col2im_add = _impl.col2im_add
depthwise_forward = _impl.depthwise_forward
depthwise_grad_input = _impl.depthwise_grad_input
depthwise_grad_weight = _impl.depthwise_grad_weight
maxpool_forward = _impl.maxpool_forward
maxpool_grad_input = _impl.maxpool_grad_input
