"""
opmatch.flow - conditional flow-matching velocity networks.
"""

from .matching import (
    DEFAULT_T_CLAMP,
    FlowState,
    VelocityModel,
    cfm_loss,
    ema_update,
    euler_step,
    sample,
    sample_times,
    score_from_velocity,
)
from .network import VelocityField, sinusoidal_embedding

__all__ = [
    "VelocityField",
    "VelocityModel",
    "FlowState",
    "sinusoidal_embedding",
    "cfm_loss",
    "sample",
    "sample_times",
    "euler_step",
    "score_from_velocity",
    "ema_update",
    "DEFAULT_T_CLAMP",
]
