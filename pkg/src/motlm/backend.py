"""Kernel backend selection.

The compiled extension (``motlm._core``) is preferred; the pure
numpy implementation is used when the extension is unavailable or when
``MOTLM_PURE_PYTHON=1`` is set.  Both expose the same function surface,
so the rest of the package imports ``kernels`` from here and never cares
which one is active.
"""

import os

from . import _purekern

if os.environ.get("MOTLM_PURE_PYTHON", "").strip() in ("1", "true", "yes"):
    kernels = _purekern
else:
    try:
        from . import _core as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _purekern

BACKEND_NAME = kernels.BACKEND


def available_backends():
    """Return the importable kernel modules, keyed by name."""
    out = {"pure": _purekern}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    return out
