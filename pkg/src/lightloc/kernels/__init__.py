"""Hot loops with a compiled (Cython) implementation and a numpy fallback.

The compiled module is used when it imports cleanly, unless the environment
variable ``LIGHTLOC_PURE_PYTHON`` is set to a non-empty value other than ``0``.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("LIGHTLOC_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if compiled_backend is not None else "python"

score_hypotheses = backend.score_hypotheses
assign_nearest = backend.assign_nearest

__all__ = ["score_hypotheses", "assign_nearest", "BACKEND_NAME", "python_backend", "compiled_backend"]
