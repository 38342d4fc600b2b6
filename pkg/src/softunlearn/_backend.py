"""Kernel selection: compiled Cython core when importable, numpy otherwise.

Set ``SOFTUNLEARN_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _core_py

BACKEND = "python"
logistic_accumulate = _core_py.logistic_accumulate
compensated_dot = _core_py.compensated_dot
gram_pair = _core_py.gram_pair
axpby = _core_py.axpby

if os.environ.get("SOFTUNLEARN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        logistic_accumulate = _core.logistic_accumulate
        compensated_dot = _core.compensated_dot
        gram_pair = _core.gram_pair
        axpby = _core.axpby

__all__ = ["BACKEND", "logistic_accumulate", "compensated_dot", "gram_pair", "axpby"]
