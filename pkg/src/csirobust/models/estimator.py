"""Scikit-learn style classifier over CSI amplitude tensors."""

from __future__ import annotations

import copy
from types import SimpleNamespace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from ..autograd import functional as F
from ..data.synth import CsiDataset
from ..utils.validation import check_csi, check_csi_labels
from .networks import (TINY, ModelSpec, TcnAutoencoder, TinyClassifier, build_autoencoder,
                       build_head, build_model)
from .training import (TrainHyper, finetune_head, predict_logits, pretrain_autoencoder,
                       train_clean)


class CsiClassifier(ClassifierMixin, BaseEstimator):
    """Train one of the model families on (N, A, K, T) amplitude tensors.

    Parameters
    ----------
    family : {"large-cnn", "large-gru", "tiny-tcn-head", "tiny-gru-head"}
    width, depth, latent_dim, head_width : architecture knobs (None = family default)
    hyper : TrainHyper or None
    encoder : TcnAutoencoder or None
        Pretrained autoencoder shared by tiny heads; pretrained on the fly
        when omitted. It is copied, never modified.
    validation_fraction : float
        Stratified holdout taken from ``X`` when ``validation_data`` is not
        passed to :meth:`fit`.
    random_state : int
    """

    def __init__(self, family="large-cnn", width=None, depth=None, latent_dim=8,
                 head_width=None, hyper=None, encoder=None, validation_fraction=0.125,
                 random_state=0):
        self.family = family
        self.width = width
        self.depth = depth
        self.latent_dim = latent_dim
        self.head_width = head_width
        self.hyper = hyper
        self.encoder = encoder
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _spec(self, dims, n_classes):
        return ModelSpec(self.family, dims, n_classes, self.width, self.depth,
                         self.latent_dim, self.head_width, int(self.random_state))

    def fit(self, X, y, validation_data=None, n_classes=None):
        X, y = check_csi_labels(X, y)
        n_classes = int(n_classes or y.max() + 1)
        if validation_data is None:
            X, Xv, y, yv = train_test_split(X, y, test_size=self.validation_fraction,
                                            stratify=y, random_state=self.random_state)
        else:
            Xv, yv = check_csi_labels(*validation_data)
        split = SimpleNamespace(train=CsiDataset(X, y, n_classes),
                                val=CsiDataset(Xv, yv, n_classes))
        hyper = self.hyper or TrainHyper(seed=int(self.random_state))
        spec = self._spec(X.shape[1:], n_classes)
        self.spec_ = spec
        if spec.family in TINY:
            ae = self.encoder
            if ae is None:
                ae = build_autoencoder(spec)
                self.ae_history_ = pretrain_autoencoder(ae, split, hyper)
            elif not isinstance(ae, TcnAutoencoder):
                raise TypeError("encoder must be a TcnAutoencoder")
            ae = copy.deepcopy(ae)
            rng = np.random.default_rng([spec.seed, 1])
            net = TinyClassifier(ae.encoder, build_head(spec, rng))
            net.spec = spec
            self.history_ = finetune_head(net, split, hyper)
        else:
            net = build_model(spec)
            self.history_ = train_clean(net, split, hyper)
        self.network_ = net
        self.classes_ = np.arange(n_classes)
        self.n_params_ = net.n_params(trainable_only=False)
        self.input_dims_ = tuple(X.shape[1:])
        return self

    @classmethod
    def from_network(cls, net, **params):
        """Wrap an already trained network as a fitted estimator."""
        est = cls(family=net.spec.family, random_state=net.spec.seed, **params)
        est.spec_ = net.spec
        est.network_ = net
        est.classes_ = np.arange(net.spec.n_classes)
        est.n_params_ = net.n_params(trainable_only=False)
        est.input_dims_ = net.spec.input_dims
        est.history_ = []
        return est

    def _check_input(self, X):
        check_is_fitted(self, "network_")
        X = check_csi(X)
        if X.shape[1:] != self.input_dims_:
            raise ValueError(f"expected inputs of shape (N, {self.input_dims_}), got {X.shape}")
        return X

    def decision_function(self, X):
        return predict_logits(self.network_, self._check_input(X))

    def predict_proba(self, X):
        return F.softmax_np(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)
