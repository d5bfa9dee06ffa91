from .buffer import Batch, ReplayBuffer
from .pgd import pgd_min_delta
from .ppo import GaussianPolicy, PpoConfig, PpoTrainer, gae_advantages, oa_ppo_train
from .surgery import gradient_surgery_combine, project_out
from .td3 import Td3Config, Td3Trainer, oa_td3_train

__all__ = [
    "Batch", "ReplayBuffer", "pgd_min_delta", "GaussianPolicy", "PpoConfig", "PpoTrainer",
    "gae_advantages", "oa_ppo_train", "gradient_surgery_combine", "project_out", "Td3Config", "Td3Trainer", "oa_td3_train",
]
