"""Kernel backend chosen at import: the compiled extension when it was built,
numpy otherwise. Set ``WDNPRESS_KERNELS=python`` to force the fallback."""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("WDNPRESS_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

attention_forward = _impl.attention_forward
aggregate = _impl.aggregate
aggregate_backward = _impl.aggregate_backward
attention_backward = _impl.attention_backward


def backend_module(name: str):
    """The kernel module for ``name`` (``cython`` or ``python``)."""
    if name == "python":
        return _kernels_py
    from . import _kernels

    return _kernels
