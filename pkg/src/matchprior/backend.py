"""Backend selection for the hot numeric kernels.

Two interchangeable implementations live in ``matchprior._kernels``:

* ``loops``      -- explicit loops compiled with numba ``@njit``
* ``vectorized`` -- pure-numpy broadcasting, no compilation step

The default is numba when it imports cleanly.  Set the environment
variable ``MATCHPRIOR_NUMBA`` to ``0`` (or ``off``) to force the numpy
path, or to ``1`` to require numba (ImportError if missing).  Tests and
benchmarks can switch at runtime with :func:`set_backend`.
"""

from __future__ import annotations

import os


def _resolve_default() -> str:
    env = os.environ.get("MATCHPRIOR_NUMBA", "auto").strip().lower()
    if env in ("0", "off", "false", "no", "numpy"):
        return "numpy"
    if env in ("1", "on", "true", "yes", "numba"):
        import numba  # noqa: F401  (raise early if forced on but absent)

        return "numba"
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        return "numpy"


_BACKEND_NAME = _resolve_default()
kernels = None  # populated by set_backend below


def set_backend(name: str):
    """Select the kernel implementation; returns the kernel namespace."""
    global _BACKEND_NAME, kernels
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    if name == "numba":
        from ._kernels import loops as impl
    else:
        from ._kernels import vectorized as impl
    _BACKEND_NAME = name
    kernels = impl
    return impl


def backend_name() -> str:
    return _BACKEND_NAME


set_backend(_BACKEND_NAME)
