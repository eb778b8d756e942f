"""Segmentation and aeration-reconstruction networks with their training utilities."""
from .augment import AugmentConfig, augment
from .calibration import apply_platt, logit, platt_calibrate, platt_fit, sigmoid
from .features import scaled_modes, temporal_fourier_features
from .layers import FnoLayer, FnoLayerParams, fno_layer_forward
from .losses import loss_total, segmentation_loss
from .networks import LunaNet, ModelConfig, SegConfig, SegNet, count_parameters, pleural_line, segment_chestwall
from .optim import AdamConfig, AdamState, adam_step

__all__ = [
    "AugmentConfig", "augment", "apply_platt", "logit", "platt_calibrate", "platt_fit", "sigmoid",
    "scaled_modes", "temporal_fourier_features", "FnoLayer", "FnoLayerParams", "fno_layer_forward",
    "loss_total", "segmentation_loss", "LunaNet", "ModelConfig", "SegConfig", "SegNet",
    "count_parameters", "pleural_line", "segment_chestwall", "AdamConfig", "AdamState", "adam_step",
]
