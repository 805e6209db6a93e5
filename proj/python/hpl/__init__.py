from ._hpl import *  # noqa: F401,F403
