"""Hot kernels with backend selection at import time.

The compiled Cython extension is preferred; the numpy fallback is used when
the extension is missing or when ``SREGNN_KERNELS=py`` is set.  Setting
``SREGNN_KERNELS=c`` makes a missing extension a hard error.  Both backends
agree to floating-point roundoff but are not guaranteed bit-identical to
each other; within one backend results are bit-reproducible.
"""
from __future__ import annotations

import os

from . import _pykernels

_requested = os.environ.get("SREGNN_KERNELS", "").strip().lower()

if _requested in ("py", "python"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested in ("c", "compiled"):
            raise
        _impl = _pykernels
        BACKEND = "python"

apply_1q = _impl.apply_1q
apply_cnot = _impl.apply_cnot
pauli_expectation = _impl.pauli_expectation
pauli_fourth_power_sum = _impl.pauli_fourth_power_sum


def available_backends() -> list[str]:
    out = []
    try:
        from . import _ckernels  # noqa: F401

        out.append("compiled")
    except ImportError:
        pass
    out.append("python")
    return out


def get_backend(name: str):
    """Return the kernel module for ``name`` ('compiled' or 'python')."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
