"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``FAPLM_PURE_PYTHON`` is set to a non-empty value,
the pure-Python versions are used. Both produce identical results.
"""
import os

from . import _kernels_py

if os.environ.get("FAPLM_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_c as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

cd_lasso_gram = _impl.cd_lasso_gram
bspline_values = _impl.bspline_values

__all__ = ["BACKEND", "cd_lasso_gram", "bspline_values"]
