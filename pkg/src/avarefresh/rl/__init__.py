from .checkpoint import (CheckpointError, ConfigHashWarning, ShapeError, config_hash,
                         load_checkpoint, save_checkpoint)
from .network import PolicyParameters, forward, init_params
from .ppo import (Adam, RolloutBuffer, TrainConfig, TrainingDivergence, gae, greedy_action,
                  normalize_advantages, ppo_loss_and_grad, ppo_update, train)

__all__ = [
    "Adam", "CheckpointError", "ConfigHashWarning", "PolicyParameters", "RolloutBuffer",
    "ShapeError", "TrainConfig", "TrainingDivergence", "config_hash", "forward", "gae",
    "greedy_action", "init_params", "load_checkpoint", "normalize_advantages",
    "ppo_loss_and_grad", "ppo_update", "save_checkpoint", "train",
]
