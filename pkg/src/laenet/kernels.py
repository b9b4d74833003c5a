"""Backend selection for the hot kernels.

The compiled extension ``laenet._kernels`` is used when it was built and
``LAENET_PURE_PYTHON`` is unset; otherwise the pure-Python twin is loaded.
"""
import os

from . import _kernels_py

if os.environ.get("LAENET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

link_state = _impl.link_state
upload = _impl.upload
gae = _impl.gae
kkt_residual = _impl.kkt_residual
tau_bisect = _impl.tau_bisect


def backends():
    """All importable backends, keyed by name (for tests and benchmarks)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
