"""Attack dispatch, surrogate transfer and adversarial-batch files."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data.csib import read_csib, write_csib
from ..data.synth import CsiDataset
from ..models.networks import family_group, network_family
from ..physcon import PhysConfig, PhysicalProjector
from ..utils.validation import check_csi_labels
from .budget import AttackBudget, Perturbation, logits_of, network_of
from .deepfool import deepfool
from .pgd import pgd

ATTACKS = ("pgd", "pgd-corr", "deepfool")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "pgd"
    budget: AttackBudget = field(default_factory=AttackBudget)
    mmd_weight: float = 0.25
    mmd_bandwidth: object = "median"
    df_max_iter: int = 100
    overshoot: float = 0.02
    sign_step: bool = False

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ValueError(f"attack must be one of {ATTACKS}, got {self.kind!r}")


def run_attack(model, X, y, spec: AttackSpec, projector=None, physcfg=None, seed=0,
               sample_ids=None) -> Perturbation:
    """Dispatch ``spec`` on a batch. The constrained PGD builds its projector
    from ``physcfg`` (receive covariance from ``X``) unless one is given."""
    if spec.kind == "deepfool":
        return deepfool(model, X, max_iter=spec.df_max_iter, overshoot=spec.overshoot,
                        snr_db=spec.budget.snr_db)
    if spec.kind == "pgd":
        return pgd(model, X, y, spec.budget, seed=seed, sample_ids=sample_ids,
                   sign_step=spec.sign_step)
    if projector is None:
        projector = PhysicalProjector.from_config(physcfg or PhysConfig(), np.shape(X)[1:], X)
    return pgd(model, X, y, spec.budget, projector=projector, mmd_weight=spec.mmd_weight,
               mmd_bandwidth=spec.mmd_bandwidth, seed=seed, sample_ids=sample_ids,
               sign_step=spec.sign_step)


def _input_dims(net):
    spec = getattr(net, "spec", None)
    return tuple(spec.input_dims) if spec is not None else tuple(net.input_dims)


@dataclass
class TransferResult:
    asr: float
    n_eval: int
    white_box_asr: float
    tag: str
    surrogate_family: str
    target_family: str
    perturbation: Perturbation


def transfer_eval(surrogate, target, X, y, spec: AttackSpec, projector=None, physcfg=None,
                  seed=0, perturbation=None) -> TransferResult:
    """Craft on ``surrogate``, score on ``target``.

    ASR is taken over samples the target classifies correctly when clean.
    ``tag`` is "intra-family" when both models are tiny or both large.
    A ``perturbation`` crafted earlier on the surrogate (e.g. a replayed
    adversarial batch) skips the crafting step.
    """
    X, y = check_csi_labels(X, y)
    s_net, t_net = network_of(surrogate), network_of(target)
    if _input_dims(s_net) != _input_dims(t_net):
        raise ValueError(f"surrogate input {_input_dims(s_net)} != target {_input_dims(t_net)}")
    pert = perturbation
    if pert is None:
        pert = run_attack(s_net, X, y, spec, projector, physcfg, seed)
    elif pert.delta.shape != X.shape:
        raise ValueError(f"perturbation shape {pert.delta.shape} != batch {X.shape}")
    s_ok = pert.clean_pred == y
    wb = float(np.mean(pert.adv_pred[s_ok] != y[s_ok])) if s_ok.any() else 0.0
    t_clean = logits_of(t_net, X).argmax(1)
    t_adv = logits_of(t_net, X + pert.delta).argmax(1)
    ok = t_clean == y
    asr = float(np.mean(t_adv[ok] != y[ok])) if ok.any() else 0.0
    fs, ft = network_family(s_net), network_family(t_net)
    tag = "intra-family" if family_group(fs) == family_group(ft) else "inter-family"
    return TransferResult(asr, int(ok.sum()), wb, tag, fs, ft, pert)


def save_adversarial_batch(path, X, pert: Perturbation, y, n_classes, clean_index=None):
    """Write ``X + delta`` with labels and the clean-sample index list."""
    clean_index = np.arange(len(X)) if clean_index is None else clean_index
    write_csib(CsiDataset(np.asarray(X) + pert.delta, y, n_classes), path,
               clean_index=clean_index)


def load_adversarial_batch(path):
    """Returns ``(dataset, clean_index)``; rejects plain (non-adversarial) files."""
    ds, idx = read_csib(path, with_index=True)
    if idx is None:
        raise ValueError(f"{path} is not an adversarial batch")
    return ds, idx
