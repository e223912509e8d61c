"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``DECENTMEM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from decentmem import _kernels_py


def _load_compiled() -> ModuleType | None:
    if os.environ.get("DECENTMEM_PURE_PYTHON") == "1":
        return None
    try:
        from decentmem import _kernels_c
    except ImportError:
        return None
    return _kernels_c


_compiled = _load_compiled()
_impl: ModuleType = _compiled if _compiled is not None else _kernels_py

BACKEND = "cython" if _compiled is not None else "python"


def available_backends() -> dict[str, ModuleType]:
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    return backends


rm_recursion = _impl.rm_recursion
weight_recursion = _impl.weight_recursion
topk_above = _impl.topk_above
