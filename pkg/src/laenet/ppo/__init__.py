"""PPO trajectory learner and baseline policies."""
from .baselines import FixedPolicy, GeometricHeuristic, RandomPolicy
from .nets import GaussianPolicy, Mlp, param_count
from .trainer import (PpoAgent, TrainConfig, TrainResult, desk_config, evaluate_policy, load_checkpoint,
                      mean_max_latency, save_checkpoint, train)
from .update import RolloutBuffer, Sgd, UpdateConfig, gae, ppo_update

__all__ = [
    "FixedPolicy", "GeometricHeuristic", "RandomPolicy", "GaussianPolicy", "Mlp", "param_count",
    "PpoAgent", "TrainConfig", "TrainResult", "desk_config", "evaluate_policy", "load_checkpoint", "mean_max_latency",
    "save_checkpoint", "train", "RolloutBuffer", "Sgd", "UpdateConfig", "gae", "ppo_update",
]
