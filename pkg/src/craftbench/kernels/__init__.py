"""Kernel backend selection.

The compiled core (Cython) is preferred when it imported cleanly; the
numpy module is the fallback.  CRAFTBENCH_BACKEND=c|python forces one
side, which the kernel benchmark uses to compare them.

Call sites go through the module-level names below so that
set_backend() can swap implementations at runtime.
"""

import os

from . import _numpy

_IMPORT_ERROR = None
try:
    from . import _core
except ImportError as exc:  # extension not built
    _core = None
    _IMPORT_ERROR = exc

_active = None


def available_backends():
    names = ["numpy"]
    if _core is not None:
        names.insert(0, "c")
    return names


def set_backend(name):
    """Select the kernel implementation: "c", "numpy", or "auto"."""
    global _active, encode, encode_backward, sim_matrix, pgd_step, label_grid
    if name in ("auto", None, ""):
        name = "c" if _core is not None else "numpy"
    if name in ("c", "ext"):
        if _core is None:
            raise ImportError(f"compiled kernels unavailable: {_IMPORT_ERROR}")
        mod = _core
        _active = "c"
    elif name in ("numpy", "python"):
        mod = _numpy
        _active = "numpy"
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    encode = mod.encode
    encode_backward = mod.encode_backward
    sim_matrix = mod.sim_matrix
    pgd_step = mod.pgd_step
    label_grid = mod.label_grid
    return _active


def active_backend():
    return _active


set_backend(os.environ.get("CRAFTBENCH_BACKEND", "auto"))
