"""Python bindings for the nbslam library."""

from ._nbslam import *  # noqa: F401,F403
from ._nbslam import __version__  # noqa: F401
