"""Selects the integration kernel at import: compiled if available, else numpy."""
from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = "compiled" if _compiled is not None else "python"


def available() -> list[str]:
    return sorted(_BACKENDS)


def active() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available()}")
    _active = name


def integrate_nh(*args, backend: str | None = None, **kwargs):
    return _BACKENDS[backend or _active].integrate_nh(*args, **kwargs)
