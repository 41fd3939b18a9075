"""Hot kernels: compiled (Cython) when available, numpy otherwise.

Set ``SPHEREFLOW_PURE_PYTHON=1`` to force the numpy kernels.
"""
import importlib
import os

from ._pykernels import NONPOSITIVE_F_MASS, NONPOSITIVE_FACTOR, OK

_impl = None
if os.environ.get("SPHEREFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = None
if _impl is None:
    from . import _pykernels as _impl

BACKEND = "cython" if _impl.__name__.endswith("_ckernels") else "python"

flow_rhs = _impl.flow_rhs
energy_terms = _impl.energy_terms
rk4_step = _impl.rk4_step
morse_enumerate = _impl.morse_enumerate


def get_backend(name):
    """Return the kernel module ``"python"`` or ``"cython"`` (ImportError if not built)."""
    if name == "python":
        return importlib.import_module("._pykernels", __name__)
    if name == "cython":
        return importlib.import_module("._ckernels", __name__)
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        get_backend("cython")
        names.append("cython")
    except ImportError:
        pass
    return names


__all__ = [
    "BACKEND",
    "OK",
    "NONPOSITIVE_FACTOR",
    "NONPOSITIVE_F_MASS",
    "flow_rhs",
    "energy_terms",
    "rk4_step",
    "morse_enumerate",
    "get_backend",
    "available_backends",
]
