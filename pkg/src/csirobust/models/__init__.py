from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimator import CsiClassifier
from .networks import (FAMILIES, TINY, GruHead, LargeCNN, LargeGRU, LinearNet, ModelSpec,
                       TcnAutoencoder, TcnHead, TinyClassifier, build_autoencoder, build_head,
                       build_model, family_group, network_classes, network_family)
from .training import (EarlyStopping, TrainHyper, TrainingDivergedError, contiguous_mask,
                       contractive_penalty, evaluate_loss, finetune_head, mask_focus,
                       predict_logits, pretrain_autoencoder, train_clean)

__all__ = [
    "CheckpointError", "CsiClassifier", "EarlyStopping", "FAMILIES", "GruHead", "LargeCNN",
    "LargeGRU", "LinearNet", "ModelSpec", "TINY", "TcnAutoencoder", "TcnHead", "TinyClassifier",
    "TrainHyper", "TrainingDivergedError", "build_autoencoder", "build_head", "build_model",
    "contiguous_mask", "contractive_penalty", "evaluate_loss", "family_group", "finetune_head",
    "load_checkpoint", "network_classes", "network_family", "mask_focus", "predict_logits", "pretrain_autoencoder",
    "save_checkpoint", "train_clean",
]
