"""Kernel backend selection.

Prefers the compiled extension when it imported cleanly; MOEKGC_KERNELS=py
forces the numpy fallback and MOEKGC_KERNELS=ext fails loudly if the
extension is unavailable. Both backends expose the same four functions.
"""

import os

from . import pyref

_requested = os.environ.get("MOEKGC_KERNELS", "auto")

if _requested == "py":
    _impl = pyref
elif _requested in ("auto", "ext"):
    try:
        from . import _fast as _impl
    except ImportError:
        if _requested == "ext":
            raise ImportError(
                "MOEKGC_KERNELS=ext but the compiled extension is missing; "
                "rebuild with `pip install -e . --no-build-isolation`"
            )
        _impl = pyref
else:
    raise ValueError(f"MOEKGC_KERNELS={_requested!r}: expected auto, ext or py")

BACKEND = _impl.BACKEND
mlp2_forward = _impl.mlp2_forward
mlp2_backward = _impl.mlp2_backward
encode_forward = _impl.encode_forward
encode_backward = _impl.encode_backward


def get_backend(name):
    """Return a specific backend module (used by tests and the benchmark)."""
    if name == "py":
        return pyref
    if name == "ext":
        from . import _fast

        return _fast
    raise ValueError(f"unknown backend {name!r}")
