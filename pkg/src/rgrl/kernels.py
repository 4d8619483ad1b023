"""Kernel dispatch: compiled Cython core when importable, numpy otherwise.

Set ``RGRL_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("RGRL_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

local_kl = _impl.local_kl
khop_pairs = _impl.khop_pairs
