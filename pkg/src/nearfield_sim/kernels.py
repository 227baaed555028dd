"""Kernel backend selection.

The compiled extension is used when it imports; set ``NEARFIELD_SIM_PURE=1`` to
force the numpy fallback.
"""

from __future__ import annotations

import os

if os.environ.get("NEARFIELD_SIM_PURE", "") not in ("", "0"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"

green_dense = _impl.green_dense
green_matvec = _impl.green_matvec
fresnel_matvec = _impl.fresnel_matvec
