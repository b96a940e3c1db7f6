"""Hot numeric kernels with a compiled core and a numpy fallback.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-numpy ``_pykernels`` module is used. :func:`use_backend` switches the
active implementation at runtime (benchmarks and equivalence tests).
"""

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("closest_point_sqdist", "winding_numbers", "splat_forward", "splat_backward")

BACKEND = "cython" if _ckernels is not None else "python"


def available_backends():
    return ("cython", "python") if _ckernels is not None else ("python",)


def get_backend(name):
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        return _ckernels
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name):
    """Select the kernel implementation used by the rest of the package."""
    global BACKEND
    mod = get_backend(name)
    for n in _NAMES:
        globals()[n] = getattr(mod, n)
    BACKEND = name


use_backend(BACKEND)
