"""Backend selection for the sum-product inner loop.

The compiled extension ``_bpkernel`` is used when it was built; otherwise the
numpy implementation in ``_bpkernel_py`` takes over.  Both expose ``run_bp``
and ``bethe_from_messages`` with identical signatures.
"""

from __future__ import annotations

import contextlib

from . import _bpkernel_py

try:
    from . import _bpkernel as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python") if _compiled is not None else ("python",)

_active = _compiled if _compiled is not None else _bpkernel_py


def backend_name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def get():
    return _active


def set_backend(name: str) -> None:
    global _active
    if name == "python":
        _active = _bpkernel_py
    elif name == "compiled":
        if _compiled is None:
            raise ImportError("compiled BP kernel is not available; build the extension first")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def using(name: str):
    prev = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)
