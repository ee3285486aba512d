"""Learning core: encoding, Q-network, reward engine and DQN updates."""

from .dqn import DQNLearner, ReplayBuffer, TrainConfig, Transition, select_action, tabular_q_update, train_step
from .encoding import AgentObservation, EncodedState, ObservationWindow, decode, encode
from .network import CheckpointError, LinearQ, QNetwork, Sgd
from .reward import DISCARD, TRANSMIT, ReceiverView, RewardConfig, action_reward, history_factor, reward_per_pair

__all__ = [
    "AgentObservation", "CheckpointError", "DISCARD", "DQNLearner", "EncodedState", "LinearQ",
    "ObservationWindow", "QNetwork", "ReceiverView", "ReplayBuffer", "RewardConfig", "Sgd",
    "TRANSMIT", "TrainConfig", "Transition", "action_reward", "decode", "encode", "history_factor",
    "reward_per_pair", "select_action", "tabular_q_update", "train_step",
]
