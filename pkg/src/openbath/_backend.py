"""Kernel backend selection.

The compiled kernels are used when the extension was built, unless the
environment variable ``OPENBATH_PURE_PYTHON=1`` asks for the NumPy ones.
"""
from __future__ import annotations

import os

from . import _pykernels

_compiled = None
if os.environ.get("OPENBATH_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

NAME = "compiled" if _compiled is not None else "python"
kernels = BACKENDS[NAME]


def get(name=None):
    """Kernel module by name (``"python"`` or ``"compiled"``); the active one by default."""
    if name is None:
        return kernels
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None
