"""Losses, PI regulation of the adversarial weight, and training procedures."""
from .augment import augment
from .config import AdtConfig, ControlConfig, E2EConfig, SupervisedConfig, Variant, e2e_defaults
from .losses import (loss_confusion, loss_control, loss_discriminator, loss_encoder_adv,
                     loss_perception_sup)
from .pi import PIState, gamma_of, pi_update
from .train import (AdtResult, TrainingDiverged, TrainLog, adapt_adt, adapt_confusion,
                    adapt_supervised, finetune_e2e, pretrain_perception, train_control,
                    velocity_labels, weighted_gradients)

__all__ = [
    "AdtConfig", "AdtResult", "ControlConfig", "E2EConfig", "PIState", "SupervisedConfig",
    "TrainLog", "TrainingDiverged", "Variant", "adapt_adt", "adapt_confusion",
    "adapt_supervised", "augment", "e2e_defaults", "finetune_e2e", "gamma_of",
    "loss_confusion", "loss_control", "loss_discriminator", "loss_encoder_adv",
    "loss_perception_sup", "pi_update", "pretrain_perception", "train_control",
    "velocity_labels", "weighted_gradients",
]
