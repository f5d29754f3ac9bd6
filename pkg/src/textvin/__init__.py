"""Text-conditioned value-iteration agents for grid-world transfer experiments."""

from .engine import GameEnv, GameSpec, parse_game_spec, reset, step
from .learner import TrainConfig, multitask_train, transfer_init
from .qnet import ModelConfig, QNetwork, q_values

__version__ = "0.1.0"

__all__ = ["GameEnv", "GameSpec", "ModelConfig", "QNetwork", "TrainConfig",
           "multitask_train", "parse_game_spec", "q_values", "reset", "step",
           "transfer_init"]
