"""Pick the compiled kernels when available.

Set ``SEXISM_DETECT_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

import os

if os.environ.get("SEXISM_DETECT_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as kernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as kernels
        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
