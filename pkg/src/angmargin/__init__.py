"""Angular-margin softmax losses, an inter-class regularizer, and a small
speaker-verification pipeline on synthetic data."""
from .geometry import DegenerateVectorError, angle, cosine, l2_normalize
from .interreg import RegConfig, combined_loss, inter_loss, sep_energy
from .losses import AnnealConfig, MarginConfig, angular_loss, anneal_schedule, modified_softmax

__all__ = [
    "AnnealConfig",
    "DegenerateVectorError",
    "MarginConfig",
    "RegConfig",
    "angle",
    "angular_loss",
    "anneal_schedule",
    "combined_loss",
    "cosine",
    "inter_loss",
    "l2_normalize",
    "modified_softmax",
    "sep_energy",
]
