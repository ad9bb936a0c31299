"""Input validation helpers shared by estimators, attacks and IO."""

from __future__ import annotations

import zlib

import numpy as np
from sklearn.utils.validation import check_array


def check_csi(X, name="X", allow_3d=False):
    """Return ``X`` as a finite float64 array of shape (N, A, K, T).

    A single sample of shape (A, K, T) is accepted when ``allow_3d`` is set
    and promoted to a batch of one.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64,
                    input_name=name, ensure_min_samples=0)
    if X.ndim == 3 and allow_3d:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"{name} must have shape (N, antennas, subcarriers, packets); "
                         f"got {X.shape}")
    if min(X.shape[1:]) < 1:
        raise ValueError(f"{name} has an empty dimension: {X.shape}")
    return X


def check_labels(y, n_samples, n_classes=None, name="y"):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"{name} must be a vector of {n_samples} labels; got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError(f"{name} must hold integer class indices")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError(f"{name} contains negative class indices")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise ValueError(f"{name} contains class {y.max()} but n_classes={n_classes}")
    return y


def check_csi_labels(X, y, n_classes=None):
    X = check_csi(X)
    return X, check_labels(y, X.shape[0], n_classes)


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_rng(*keys):
    """Deterministic generator from a tuple of non-negative ints or strings.

    Strings (stage names) are mapped through CRC32 so the stream does not
    depend on Python's randomized ``hash``.
    """
    entropy = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
