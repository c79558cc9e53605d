"""dreamnav: learn a generative world model of a small visual navigation
environment from random-action trajectories, then train control policies
entirely inside the learned model ("in a dream") and evaluate them against
the real simulator."""

__version__ = "0.1.0"

from dreamnav.errors import ConfigError, DreamnavError, FormatError, TrainError

__all__ = ["ConfigError", "DreamnavError", "FormatError", "TrainError", "__version__"]
