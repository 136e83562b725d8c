"""Optimisation loop, schedules, balancer and checkpoints."""
from .balancer import LanguageBalancer, balanced_batches
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .loop import STAGES, finetune, load_armodel, load_vocoder, load_vqvae, stage_path, train, train_all
from .optim import AdamW, LrSchedule, OptimizerConfig, accumulated_step, adamw_step, decay_exempt, lr_at

__all__ = [
    "LanguageBalancer", "balanced_batches", "Checkpoint", "load_checkpoint", "save_checkpoint", "STAGES",
    "finetune", "load_armodel", "load_vocoder", "load_vqvae", "stage_path", "train", "train_all", "AdamW",
    "LrSchedule", "OptimizerConfig", "accumulated_step", "adamw_step", "decay_exempt", "lr_at",
]
