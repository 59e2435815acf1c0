"""Kernel backend selection.

The recurrent scan dominates training time, so it has a compiled
implementation (clpd.model._scan, built from _scan.pyx) alongside the
pure-numpy reference in pyref.  The compiled kernel is preferred when the
extension imported successfully; set CLPD_BACKEND=python or CLPD_BACKEND=cython
to force a choice.  Both backends are deterministic; they agree to float64
rounding (last-ulp differences in the transcendentals), not bitwise.
"""

from __future__ import annotations

import logging
import os

from clpd.model.backend import pyref

log = logging.getLogger(__name__)

try:
    from clpd.model import _scan as _compiled
except ImportError:
    _compiled = None


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.append("cython")
    return names


def _resolve(name: str | None):
    if name in (None, ""):
        name = os.environ.get("CLPD_BACKEND", "")
    if name in (None, "", "auto"):
        return _compiled if _compiled is not None else pyref
    if name == "python":
        return pyref
    if name == "cython":
        if _compiled is None:
            log.warning("compiled kernel unavailable; falling back to python backend")
            return pyref
        return _compiled
    raise ValueError(f"unknown backend {name!r} (expected python, cython or auto)")


_active = _resolve(None)


def active() -> str:
    return _active.NAME


def get_backend(name: str | None = None):
    """Return the kernel module; None selects the active default."""
    if name is None:
        return _active
    return _resolve(name)


def set_backend(name: str) -> str:
    """Switch the process-wide default backend; returns the resolved name."""
    global _active
    _active = _resolve(name)
    return _active.NAME
