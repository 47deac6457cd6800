"""Steady-state detection error probabilities for adaptive diffusion networks.

Exact asymptotics, large-deviations rates, normal approximations and
importance-sampling Monte Carlo for the constant step-size ATC diffusion.
"""

from .asymptotics import *  # noqa: F401,F403
from .config import ConfigError, ExperimentConfig, load_config, parse_config  # noqa: F401
from .lmgf import *  # noqa: F401,F403
from .models import *  # noqa: F401,F403
from .montecarlo import *  # noqa: F401,F403
from .network import *  # noqa: F401,F403

__version__ = "0.1.0"
