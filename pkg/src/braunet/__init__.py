"""Routing-attention segmentation toolkit.

A self-contained stack: a numpy-backed reverse-mode autodiff engine, the
neural blocks and U-shaped encoder-decoder built on bi-level routing
attention, the PS/FH evaluation metrics with the composite challenge score,
and a deterministic training pipeline with a CLI.
"""

from .attention import BiLevelRoutingAttention, BraConfig, ConfigError, TOPK_ALL
from .autodiff import Tensor, no_grad
from .metrics import SegMask, ScoreReport, challenge_score, evaluate_pair
from .model import BraUNet, ModelConfig, default_config, toy_config
from .train import Adam, TrainConfig, predict, seg_loss, train

__all__ = [
    "Adam",
    "BiLevelRoutingAttention",
    "BraConfig",
    "BraUNet",
    "ConfigError",
    "ModelConfig",
    "ScoreReport",
    "SegMask",
    "Tensor",
    "TOPK_ALL",
    "TrainConfig",
    "challenge_score",
    "default_config",
    "evaluate_pair",
    "no_grad",
    "predict",
    "seg_loss",
    "toy_config",
    "train",
]
