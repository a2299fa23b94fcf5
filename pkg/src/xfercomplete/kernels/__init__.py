"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

``XFER_KERNELS=numpy`` forces the fallback; ``XFER_KERNELS=cython`` demands
the extension and raises if it is missing. ``backend()`` reports which one
is live. Both backends implement identical contracts; results agree to
floating-point summation order (see tests/test_kernels.py).
"""

from __future__ import annotations

import os

from . import pykernels

_FORCED = os.environ.get("XFER_KERNELS", "").strip().lower()

_impl = None
if _FORCED != "numpy":
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = None
        if _FORCED == "cython":
            raise ImportError(
                "XFER_KERNELS=cython but the compiled extension is not built; "
                "run `pip install -e . --no-build-isolation`")

_active = _impl if _impl is not None else pykernels


def backend() -> str:
    return "cython" if _active is not pykernels else "numpy"


def get_backend(name: str):
    """Explicit backend module by name (used by equivalence tests/benchmarks)."""
    if name == "numpy":
        return pykernels
    if name == "cython":
        if _impl is None:
            raise ImportError("compiled kernels not available")
        return _impl
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    return ["numpy"] + (["cython"] if _impl is not None else [])


causal_softmax = _active.causal_softmax
softmax_xent = _active.softmax_xent
gelu_fwd = _active.gelu_fwd
gelu_bwd = _active.gelu_bwd
embedding_grad = _active.embedding_grad
adam_step = _active.adam_step
