"""Per-subcarrier z-scoring, optional temporal smoothing, stratified splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..utils.validation import check_csi
from .synth import CsiDataset

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class ZScoreNormalizer(TransformerMixin, BaseEstimator):
    """Standardize every (antenna, subcarrier) channel with statistics taken
    over samples and packets of the data passed to :meth:`fit`.

    Channels whose standard deviation is below ``1e-8`` are clamped to that
    floor and listed in ``clamped_channels_``.
    """

    def fit(self, X, y=None):
        X = check_csi(X)
        if X.shape[0] == 0:
            raise ValueError("cannot fit normalization statistics on an empty set")
        self.mean_ = X.mean(axis=(0, 3))
        std = X.std(axis=(0, 3))
        low = std < STD_FLOOR
        if low.any():
            logger.warning("%d zero-variance channel(s) clamped to std=%g",
                           int(low.sum()), STD_FLOOR)
        self.std_ = np.where(low, STD_FLOOR, std)
        self.clamped_channels_ = [tuple(int(i) for i in ix) for ix in np.argwhere(low)]
        return self

    def transform(self, X):
        check_is_fitted(self, ("mean_", "std_"))
        X = check_csi(X)
        if X.shape[1:3] != self.mean_.shape:
            raise ValueError(f"expected {self.mean_.shape} channels, got {X.shape[1:3]}")
        return (X - self.mean_[None, :, :, None]) / self.std_[None, :, :, None]


class MovingAverageSmoother(TransformerMixin, BaseEstimator):
    """Moving average along packets (edge values repeated at the borders)."""

    def __init__(self, width=5):
        self.width = width

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = check_csi(X)
        if self.width <= 1:
            return X.copy()
        return uniform_filter1d(X, size=self.width, axis=-1, mode="nearest")


@dataclass
class DatasetSplit:
    train: CsiDataset
    val: CsiDataset
    test: CsiDataset
    seed: int
    ratios: tuple
    indices: tuple = ()


def _largest_remainder(total, ratios):
    raw = np.asarray(ratios) * total
    base = np.floor(raw).astype(int)
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:total - base.sum()]] += 1
    return base


def split(dataset: CsiDataset, ratios=(0.7, 0.1, 0.2), seed=0) -> DatasetSplit:
    """Stratified, seeded train/val/test partition.

    Split totals follow largest-remainder rounding of ``ratios * N``; each
    class contributes floor or floor + 1 of its exact share to every split.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    y = dataset.y
    classes, counts = np.unique(y, return_counts=True)
    short = classes[counts < 3]
    if short.size:
        raise ValueError(f"classes {short.tolist()} have fewer samples than splits (3)")
    rng = np.random.default_rng(seed)
    totals = _largest_remainder(len(y), ratios)

    shares = np.outer(counts, ratios)
    alloc = np.floor(shares).astype(int)
    row_left = counts - alloc.sum(1)
    col_left = totals - alloc.sum(0)
    frac = shares - alloc
    # hand the leftover units out greedily (Gale-Ryser order), preferring
    # splits where the class has the largest fractional share
    for ci in np.argsort(-row_left, kind="stable"):
        for _ in range(row_left[ci]):
            cand = [j for j in range(3) if col_left[j] > 0 and frac[ci, j] >= 0]
            if not cand:
                cand = [j for j in range(3) if col_left[j] > 0]
            j = max(cand, key=lambda jj: (col_left[jj], frac[ci, jj], -jj))
            alloc[ci, j] += 1
            col_left[j] -= 1
            frac[ci, j] = -1.0

    parts = [[], [], []]
    for ci, c in enumerate(classes):
        members = rng.permutation(np.flatnonzero(y == c))
        cuts = np.cumsum(alloc[ci])
        for j, (lo, hi) in enumerate(zip(np.r_[0, cuts[:-1]], cuts)):
            parts[j].extend(members[lo:hi].tolist())
    idx = tuple(np.sort(np.asarray(p, dtype=np.int64)) for p in parts)
    return DatasetSplit(*(dataset.subset(i) for i in idx), seed=seed, ratios=ratios,
                        indices=idx)


def normalize(split_data: DatasetSplit, smoothing_width=0):
    """Fit z-scoring on the training split and apply it to all three.

    Returns the transformed split and the fitted normalizer (its statistics
    are reused unchanged for val/test and later evaluation).
    """
    steps = []
    if smoothing_width and smoothing_width > 1:
        steps.append(MovingAverageSmoother(smoothing_width))
    norm = ZScoreNormalizer()

    def apply(ds, fit=False):
        X = ds.X
        for s in steps:
            X = s.transform(X)
        X = norm.fit_transform(X) if fit else norm.transform(X)
        return CsiDataset(X, ds.y, ds.n_classes)

    train = apply(split_data.train, fit=True)
    out = DatasetSplit(train, apply(split_data.val), apply(split_data.test),
                       split_data.seed, split_data.ratios, split_data.indices)
    return out, norm
