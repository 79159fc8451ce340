"""Graph-attention actor-critic placement policy and its A3C trainer."""

from .a3c import A3CConfig, Master, TrainResult, a3c_update, discounted_returns, train
from .agent import LearningPolicy, RLPolicy, Trajectory, a3c_worker_episode, policy_step
from .checkpoint import load_checkpoint, save_checkpoint
from .model import PolicyModel, backward, forward, gat_forward

__all__ = [
    "A3CConfig", "Master", "TrainResult", "a3c_update", "discounted_returns", "train",
    "LearningPolicy", "RLPolicy", "Trajectory", "a3c_worker_episode", "policy_step",
    "load_checkpoint", "save_checkpoint", "PolicyModel", "backward", "forward", "gat_forward",
]
