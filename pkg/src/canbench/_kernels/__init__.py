"""Hot tree kernels: compiled extension when built, NumPy fallback otherwise.

Set ``CANBENCH_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("CANBENCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

accumulate = _impl.accumulate
best_split_gini = _impl.best_split_gini
best_split_second_order = _impl.best_split_second_order


def backends():
    """Map of available backend name -> kernel module."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def get(name=None):
    """Kernel module by name; ``None`` gives the import-time default."""
    if name is None:
        return _impl
    available = backends()
    if name not in available:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(available)}")
    return available[name]
