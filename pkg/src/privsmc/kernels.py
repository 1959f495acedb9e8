"""Backend selection for the walk kernels.

The compiled ``_walk`` extension is used when it imports; otherwise the numpy
fallback in ``_walk_py``. Set ``PRIVSMC_PURE_PYTHON=1`` to force the fallback.
Both backends return identical results for identical generator states.
"""
from __future__ import annotations

import os

from privsmc import _walk_py

if os.environ.get("PRIVSMC_PURE_PYTHON"):
    _impl = _walk_py
    BACKEND = "python"
else:
    try:
        from privsmc import _walk as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _walk_py
        BACKEND = "python"

bernoulli_walk = _impl.bernoulli_walk
bits_walk = _impl.bits_walk
pair_walks = _impl.pair_walks


def backends() -> dict:
    """Map of importable backend names to kernel modules."""
    found = {"python": _walk_py}
    try:
        from privsmc import _walk
    except ImportError:
        pass
    else:
        found["cython"] = _walk
    return found
