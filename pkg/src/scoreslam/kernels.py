"""Select the compiled kernels when available, the NumPy fallback otherwise.

Set ``SCORESLAM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

_ckernels = None
if not os.environ.get("SCORESLAM_PURE_PYTHON"):
    try:
        from . import _ckernels  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on the build
        logger.info("compiled kernels unavailable; using the pure-Python fallback")
        _ckernels = None

BACKEND = "compiled" if _ckernels is not None else "python"
_impl = _ckernels if _ckernels is not None else _pykernels

ldl_etree = _impl.ldl_etree
ldl_factor = _impl.ldl_factor
ldl_solve = _impl.ldl_solve
map_residuals_jacobian = _impl.map_residuals_jacobian
pose_edge_nnz = _impl.pose_edge_nnz


def backend(name: str | None = None):
    """Return the kernel module for ``name`` ('compiled', 'python' or the default)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available() -> bool:
    return _ckernels is not None
