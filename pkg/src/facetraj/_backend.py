"""Kernel backend selection.

The compiled ``_ckernels`` module is used when importable, unless the
environment variable ``FACETRAJ_PURE`` is set to a non-empty value.
"""
import os

from . import _pykernels

NAME = "python"
kernels = _pykernels

if not os.environ.get("FACETRAJ_PURE"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        kernels = _ckernels
        NAME = "cython"


def get(name=None):
    """Return the kernel module by name (``"cython"``/``"python"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
