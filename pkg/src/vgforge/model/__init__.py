"""Unified image/point-cloud tokenizer, transformer encoder and training loop.

Everything is plain numpy with hand-derived backward passes; gradient
correctness is pinned by finite-difference tests rather than an autodiff
framework.
"""

from .params import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .tokenize import TokenSequence, tokenize_cloud, tokenize_image, tokenize_joint
from .encoder import forward
from .losses import ce_loss, vgc_loss
from .train import TrainConfig, TrainingReport, train_toy

__all__ = [
    "ModelConfig",
    "TokenSequence",
    "TrainConfig",
    "TrainingReport",
    "ce_loss",
    "forward",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "tokenize_cloud",
    "tokenize_image",
    "tokenize_joint",
    "train_toy",
    "vgc_loss",
]
