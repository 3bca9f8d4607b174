"""Hot loop backends.

The compiled ``_ah_cy`` extension is used when it was built; otherwise the
pure-numpy ``_ah_py`` loop is selected.  Setting ``COUNTERSPEC_PURE=1``
forces the fallback.
"""
import os

from . import _ah_py
from ._ah_py import CONVERGED, DIVERGED, ITERATION_CAP

python_kernel = _ah_py.arrow_hurwicz_qp

try:
    from ._ah_cy import arrow_hurwicz_qp as compiled_kernel
except ImportError:  # extension not built
    compiled_kernel = None

if compiled_kernel is not None and os.environ.get("COUNTERSPEC_PURE", "") not in ("1", "true", "yes"):
    arrow_hurwicz_qp = compiled_kernel
    BACKEND = "cython"
else:
    arrow_hurwicz_qp = python_kernel
    BACKEND = "python"

__all__ = ["arrow_hurwicz_qp", "python_kernel", "compiled_kernel", "BACKEND",
           "CONVERGED", "ITERATION_CAP", "DIVERGED"]
