"""Toy-scale channel attention, channel folding and flow-to-event distillation."""

from .layers import (
    SEParams,
    channel_fold,
    channel_unfold,
    cross_entropy,
    distill_loss,
    se_backward,
    se_forward,
)
from .net import NetConfig, ToyNet
from .optim import TrainConfig, lr_at, sgd_step
from .train import (
    TrainResult,
    evaluate,
    read_log,
    train_classifier,
    train_student_distilled,
    train_teacher,
    write_log,
)

__all__ = [
    "NetConfig",
    "SEParams",
    "ToyNet",
    "TrainConfig",
    "TrainResult",
    "channel_fold",
    "channel_unfold",
    "cross_entropy",
    "distill_loss",
    "evaluate",
    "lr_at",
    "read_log",
    "se_backward",
    "se_forward",
    "sgd_step",
    "train_classifier",
    "train_student_distilled",
    "train_teacher",
    "write_log",
]
