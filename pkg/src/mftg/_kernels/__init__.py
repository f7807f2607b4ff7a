"""Hot simulation kernels with two interchangeable backends.

``numpy_impl`` is pure vectorized numpy; ``numba_impl`` compiles the same
loops with numba.  Selection happens at import time from the ``MFTG_NUMBA``
environment variable:

* ``auto`` (default): numba when importable, numpy otherwise,
* ``1`` / ``true`` / ``on``: require numba, raise if unavailable,
* ``0`` / ``false`` / ``off``: force the numpy fallback.

Both backends consume pre-generated random increments, so for a fixed
:class:`~mftg.core.RandomStream` they simulate the same noise realizations.
``MFTG_THREADS`` caps the numba thread pool.
"""

from __future__ import annotations

import os

__all__ = [
    "backend_name",
    "security_ensemble",
    "kuramoto_ensemble",
    "virus_agents",
    "virus_graph",
    "rooms_ensemble",
    "prosumer_ensemble",
]

_FLAG = os.environ.get("MFTG_NUMBA", "auto").strip().lower()
_FORCE_ON = _FLAG in ("1", "true", "on", "numba")
_FORCE_OFF = _FLAG in ("0", "false", "off", "numpy")


def _cap_threads() -> None:
    cap = os.environ.get("MFTG_THREADS")
    if not cap:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):
        pass


if _FORCE_OFF:
    from .numpy_impl import *  # noqa: F401,F403

    _BACKEND = "numpy"
else:
    try:
        from .numba_impl import *  # noqa: F401,F403

        _BACKEND = "numba"
        _cap_threads()
    except ImportError:
        if _FORCE_ON:
            raise
        from .numpy_impl import *  # noqa: F401,F403

        _BACKEND = "numpy"


def backend_name() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _BACKEND
