"""Attack success, (robust) accuracy, macro-F1 and evaluation records."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks.budget import PSR_SENTINEL, logits_of, network_of


def _predict(model, X):
    return logits_of(network_of(model), np.asarray(X, dtype=np.float64)).argmax(1)


def asr_from_predictions(adv_pred, labels, mask=None):
    adv_pred, labels = np.asarray(adv_pred), np.asarray(labels)
    mask = np.ones(len(labels), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != labels.shape or adv_pred.shape != labels.shape:
        raise ValueError("predictions, labels and mask must align")
    if not mask.any():
        raise ValueError("ASR over an empty subset is undefined")
    return float(np.mean(adv_pred[mask] != labels[mask]))


def asr(model, adv_samples, labels, clean_correct_mask):
    """Fraction of masked samples misclassified after perturbation."""
    return asr_from_predictions(_predict(model, adv_samples), labels, clean_correct_mask)


def accuracy(model, samples, labels):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(_predict(model, samples) == labels))


def robust_accuracy(model, adv_samples, labels, mask=None):
    """Top-1 accuracy on perturbed inputs, optionally on a subset."""
    labels = np.asarray(labels)
    pred = _predict(model, adv_samples)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("robust accuracy over an empty subset is undefined")
        pred, labels = pred[mask], labels[mask]
    return float(np.mean(pred == labels))


def confusion(predictions, labels, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


@dataclass
class F1Report:
    macro: float
    per_class: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    absent: list
    macro_present: float

    def __float__(self):
        return self.macro


def macro_f1(predictions, labels, n_classes) -> F1Report:
    """Unweighted mean of per-class F1 over all ``n_classes``.

    A class with no labels gets F1 = 0, is listed in ``absent``, and is left
    out of ``macro_present``.
    """
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    cm = confusion(predictions, labels, n_classes)
    tp = np.diag(cm).astype(np.float64)
    pred_n = cm.sum(0)
    true_n = cm.sum(1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_n > 0, tp / pred_n, 0.0)
        recall = np.where(true_n > 0, tp / true_n, 0.0)
        denom = pred_n + true_n
        f1 = np.where(denom > 0, 2 * tp / denom, 0.0)
    absent = [int(c) for c in np.flatnonzero(true_n == 0)]
    present = true_n > 0
    macro_present = float(f1[present].mean()) if present.any() else 0.0
    return F1Report(float(f1.mean()), f1, precision, recall, absent, macro_present)


@dataclass
class EvalResult:
    n_total: int
    n_clean_correct: int
    n_adv_wrong_given_clean_correct: int
    n_adv_wrong: int
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    clean_macro_f1: float = 0.0
    psr_mean: float = float("nan")
    psr_std: float = float("nan")
    capacity: int = 0

    def __post_init__(self):
        counts = (self.n_clean_correct, self.n_adv_wrong_given_clean_correct, self.n_adv_wrong)
        if not all(0 <= c <= self.n_total for c in counts):
            raise ValueError("counts must lie in [0, n_total]")
        if self.n_adv_wrong_given_clean_correct > self.n_clean_correct:
            raise ValueError("more flipped than clean-correct samples")

    @property
    def asr(self):
        """Headline ASR on the clean-correct subset."""
        if self.n_clean_correct == 0:
            return float("nan")
        return self.n_adv_wrong_given_clean_correct / self.n_clean_correct

    @property
    def robust_accuracy(self):
        return 1.0 - self.asr

    @property
    def asr_all(self):
        return self.n_adv_wrong / self.n_total if self.n_total else float("nan")

    @property
    def clean_accuracy(self):
        return self.n_clean_correct / self.n_total if self.n_total else float("nan")

    def to_dict(self):
        d = asdict(self)
        d.update(asr=self.asr, robust_accuracy=self.robust_accuracy, asr_all=self.asr_all,
                 clean_accuracy=self.clean_accuracy)
        return d


def evaluate_predictions(clean_pred, adv_pred, labels, n_classes, psr_db=None, capacity=0):
    clean_pred, adv_pred, labels = map(np.asarray, (clean_pred, adv_pred, labels))
    ok = clean_pred == labels
    f1 = macro_f1(clean_pred, labels, n_classes)
    psr_mean = psr_std = float("nan")
    if psr_db is not None:
        psr = np.asarray(psr_db, dtype=np.float64)[ok]
        psr = psr[psr > PSR_SENTINEL]
        if psr.size:
            psr_mean = float(psr.mean())
            psr_std = float(psr.std(ddof=1)) if psr.size > 1 else 0.0
    return EvalResult(int(labels.size), int(ok.sum()), int((adv_pred[ok] != labels[ok]).sum()),
                      int((adv_pred != labels).sum()), f1.precision.tolist(),
                      f1.recall.tolist(), f1.macro, psr_mean, psr_std, int(capacity))


def evaluate_attack(model, X, y, perturbation, n_classes=None) -> EvalResult:
    net = network_of(model)
    n_classes = n_classes or int(logits_of(net, X[:1]).shape[1])
    clean = _predict(net, X)
    adv = _predict(net, X + perturbation.delta)
    return evaluate_predictions(clean, adv, y, n_classes, perturbation.achieved_psr_db,
                                net.n_params(trainable_only=False))
