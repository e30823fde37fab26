"""Pick the compiled kernels when the extension is built, else numpy."""
import os

from . import _kernels_py

try:
    if os.environ.get("PASS_OPT_PURE_PYTHON"):
        raise ImportError("pure-python kernels requested")
    from . import _kernels as kernels  # type: ignore[attr-defined]
    COMPILED = True
except ImportError:
    kernels = _kernels_py
    COMPILED = False

__all__ = ["kernels", "COMPILED"]
