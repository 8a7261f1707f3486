"""Error-detection network: layers, training and verification."""

from .checkpoint import Checkpoint
from .gradcheck import GradCheckResult, grad_check
from .model import (DETECTOR_MAPS, Network, bce_loss, block_output_shapes, build_error_detector,
                    build_network, build_pitch_classifier)
from .train import Adam, PatchSource, TrainConfig, backprop, predict_batch, train

__all__ = [
    "Adam", "Checkpoint", "DETECTOR_MAPS", "GradCheckResult", "Network", "PatchSource",
    "TrainConfig", "backprop", "bce_loss", "block_output_shapes", "build_error_detector",
    "build_network", "build_pitch_classifier", "grad_check", "predict_batch", "train",
]
