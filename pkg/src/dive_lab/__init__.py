"""Desk-scale laboratory for distilling virtual examples in long-tailed classification."""

__version__ = "0.1.0"

from .mathcore import (  # noqa: E402
    DistillConfig,
    LossValue,
    TargetForm,
    blended_target,
    bsce_softmax,
    cross_entropy,
    dive_loss,
    entropy,
    kd_loss,
    kl_divergence,
    power_normalize,
    softmax,
    softmax_temp,
)
