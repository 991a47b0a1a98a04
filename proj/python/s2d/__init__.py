"""Python surface for the speculative-decoding engine.

Everything is implemented in the compiled extension; this package just
re-exports it so `import s2d` works both from an installed wheel (where
the extension lives inside the package) and from a build tree (where it
sits on PYTHONPATH).
"""

try:
    from ._s2d import *  # noqa: F401,F403
    from . import _s2d as _impl
except ImportError:
    from _s2d import *  # noqa: F401,F403
    import _s2d as _impl

__all__ = [name for name in dir(_impl) if not name.startswith("_")]
