"""Backend selection for the hot loops.

The compiled extension is used when importable; setting the environment
variable ``NLRSPIRIT_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("NLRSPIRIT_PURE_PYTHON", "") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND
block_match_coil = _impl.block_match_coil
extract_coil = _impl.extract_coil
scatter_add_coil = _impl.scatter_add_coil
poisson_darts = _impl.poisson_darts
window_bounds = _pykernels.window_bounds


def available_backends():
    """Map backend name to module for every importable implementation."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
