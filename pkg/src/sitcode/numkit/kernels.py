"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it was built and
``SITCODE_PURE_PYTHON`` is unset; otherwise the numpy versions in
``_pykernels`` are used.  Both expose the same four functions.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("SITCODE_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"


def use_backend(name: str) -> None:
    """Switch kernels at runtime (``"cython"`` or ``"python"``)."""
    global _impl, BACKEND
    if name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available; build the extension first")
        _impl = compiled_backend
    elif name == "python":
        _impl = python_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def masked_softmax_fwd(x, allowed):
    return _impl.masked_softmax_fwd(x, allowed)


def masked_softmax_bwd(y, g):
    return _impl.masked_softmax_bwd(y, g)


def layer_norm_fwd(x, gain, bias, eps):
    return _impl.layer_norm_fwd(x, gain, bias, eps)


def layer_norm_bwd(g, xhat, rstd, gain):
    return _impl.layer_norm_bwd(g, xhat, rstd, gain)
