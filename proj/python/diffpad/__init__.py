"""Python bindings for the diffpad presentation attack detection engine."""

from ._core import *  # noqa: F401,F403
from ._core import DiffpadError

__all__ = [name for name in dir() if not name.startswith("_")]
