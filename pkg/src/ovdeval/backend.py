"""Kernel backend selection: compiled extension with pure-Python fallback.

The compiled kernels are preferred when the extension built; set the
``OVDEVAL_BACKEND`` environment variable to ``python`` or ``compiled`` to
force a choice, or call :func:`set_backend` at runtime (tests and the
benchmark do this).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

OUTCOME_NONE = _kernels_py.OUTCOME_NONE
OUTCOME_TP = _kernels_py.OUTCOME_TP
OUTCOME_FP_DISJOINT = _kernels_py.OUTCOME_FP_DISJOINT
OUTCOME_FP_LOW_IOU = _kernels_py.OUTCOME_FP_LOW_IOU
OUTCOME_FP_LABEL_MISMATCH = _kernels_py.OUTCOME_FP_LABEL_MISMATCH

_KERNEL_NAMES = (
    "segment_nlse",
    "segment_max",
    "pairwise_iou",
    "group_image",
    "dba_classify",
    "match_greedy",
    "nms_keep",
)


def available_backends() -> tuple[str, ...]:
    return ("python", "compiled") if _compiled is not None else ("python",)


def _resolve(name: str) -> ModuleType:
    if name == "auto":
        name = os.environ.get("OVDEVAL_BACKEND", "compiled" if _compiled else "python")
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r}")


_active = _resolve("auto")


def set_backend(name: str) -> str:
    """Select the kernel backend ("python", "compiled", or "auto")."""
    global _active
    _active = _resolve(name)
    _rebind()
    return backend_name()


def backend_name() -> str:
    return "compiled" if getattr(_active, "IS_COMPILED", False) else "python"


def _rebind():
    g = globals()
    for fn in _KERNEL_NAMES:
        g[fn] = getattr(_active, fn)


_rebind()
