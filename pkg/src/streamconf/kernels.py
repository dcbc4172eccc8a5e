"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set STREAMCONF_PURE_PY=1 to force the fallback (used by the kernel benchmark
and the parity tests).
"""

import os

from . import _kernels_py

HAVE_COMPILED = False
_impl = _kernels_py

if not os.environ.get("STREAMCONF_PURE_PY"):
    try:
        from . import _kernels as _compiled

        _impl = _compiled
        HAVE_COMPILED = True
    except ImportError:
        pass

seed_state = _impl.seed_state
xoshiro_fill = _impl.xoshiro_fill
depthwise_conv1d = _impl.depthwise_conv1d
deform_conv1d_forward = _impl.deform_conv1d_forward
deform_conv1d_backward = _impl.deform_conv1d_backward

pure = _kernels_py
