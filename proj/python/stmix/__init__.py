"""Spatiotemporal token-mixer core bindings."""

try:
    from ._core import *  # noqa: F401,F403  (installed wheel layout)
    from . import _core as _impl
except ImportError:  # in-tree build: _core sits on PYTHONPATH next to the package
    from _core import *  # noqa: F401,F403
    import _core as _impl

__all__ = [name for name in dir(_impl) if not name.startswith("_")]
__version__ = "0.1.0"
