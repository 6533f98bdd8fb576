"""Backend selection for the hot kernels.

The compiled extension ``kkreduce._kernels`` is used when it is importable;
otherwise the numpy implementation in ``kkreduce._kernels_py`` is used.
:func:`use_backend` switches explicitly (tests and benchmarks use it).
"""

from __future__ import annotations

from . import _kernels_py

try:  # pragma: no cover - depends on the build
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_active = _BACKENDS.get("cython", _kernels_py)


def available_backends() -> tuple[str, ...]:
    return tuple(_BACKENDS)


def backend() -> str:
    """Name of the active backend (``"cython"`` or ``"python"``)."""
    return "cython" if _active is _compiled and _compiled is not None else "python"


def use_backend(name: str) -> None:
    """Select the kernel backend by name."""
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; available: {available_backends()}") from None


def frame_batch(ad_coset, coset_idx, y):
    """Batched Maurer-Cartan frame; see :func:`kkreduce._kernels_py.frame_batch`."""
    return _active.frame_batch(ad_coset, coset_idx, y)
