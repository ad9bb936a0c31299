from .budget import (PSR_SENTINEL, AttackBudget, Perturbation, logits_of, measure_psr,
                     network_of, project_l2, snr_to_eps)
from .deepfool import class_gradients, deepfool
from .pgd import pgd, pgd_engine, random_ball_start
from .transfer import (ATTACKS, AttackSpec, TransferResult, load_adversarial_batch, run_attack,
                       save_adversarial_batch, transfer_eval)
from .uap import UniversalPerturbation, fooling_rate, mean_norm, uap

__all__ = [
    "ATTACKS", "AttackBudget", "AttackSpec", "PSR_SENTINEL", "Perturbation", "TransferResult",
    "UniversalPerturbation", "class_gradients", "deepfool", "fooling_rate",
    "load_adversarial_batch", "logits_of", "mean_norm", "measure_psr", "network_of", "pgd", "pgd_engine",
    "project_l2", "random_ball_start", "run_attack", "save_adversarial_batch", "snr_to_eps",
    "transfer_eval", "uap",
]
