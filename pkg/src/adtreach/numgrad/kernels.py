"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
reference is used. ``NUMGRAD_KERNELS=python`` forces the reference.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("NUMGRAD_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
maxpool2x2_fwd = _impl.maxpool2x2_fwd
maxpool2x2_bwd = _impl.maxpool2x2_bwd
