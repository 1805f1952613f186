"""Twin-critic actor-critic learners (TD3, ATD3, ATD3_RNN) and gait rewards for a planar biped."""

from .agent import Hyperparams, Learner, ReplayBuffer
from .pointmass import PointMass1D
from .walker import RobotConfig, Walker2D

__all__ = ["Hyperparams", "Learner", "ReplayBuffer", "PointMass1D", "RobotConfig", "Walker2D"]
__version__ = "0.1.0"
