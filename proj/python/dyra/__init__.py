from ._dyra import *  # noqa: F401,F403
from ._dyra import __version__  # noqa: F401
