"""Minimum-variance estimation of finite-state Markov chains as dual optimal control."""

from .ctmc import *  # noqa: F401,F403
from .dual_control import *  # noqa: F401,F403
from .grid import *  # noqa: F401,F403
from .kalman import *  # noqa: F401,F403
from .montecarlo import *  # noqa: F401,F403
from .observation import *  # noqa: F401,F403
from .stochint import *  # noqa: F401,F403
from .wonham import *  # noqa: F401,F403
from .config import ConfigError, Scenario, load_scenario  # noqa: F401
from .export import package_version

__version__ = package_version()
