from types import SimpleNamespace

import numpy as np
import pytest
from sklearn.base import clone

from csirobust.autograd import Tensor, no_grad
from csirobust.autograd import functional as F
from csirobust.data import ChannelParams, CsiDataset, normalize, split, synth_generate
from csirobust.metrics import macro_f1
from csirobust.models import (CheckpointError, CsiClassifier, EarlyStopping, ModelSpec,
                              TcnAutoencoder, TinyClassifier, TrainHyper, build_head,
                              build_model, contiguous_mask, contractive_penalty, load_checkpoint,
                              mask_focus, predict_logits, pretrain_autoencoder, save_checkpoint,
                              train_clean)
from csirobust.models import training
from csirobust.models.networks import TcnEncoder


@pytest.fixture(scope="module")
def two_class():
    ds = synth_generate(ChannelParams(noise_std=0.01), 2, 40, (2, 8, 32), seed=1)
    sp, _ = normalize(split(ds, seed=1))
    return sp


# ------------------------------------------------------------ construction

def test_tiny_gru_head_is_under_100k_parameters():
    net = build_model(ModelSpec("tiny-gru-head", (3, 114, 500), 7))
    assert 0 < net.n_params(trainable_only=False) < 100_000
    large = build_model(ModelSpec("large-cnn", (3, 114, 500), 7))
    assert large.n_params() > net.n_params()


@pytest.mark.parametrize("family", ["large-cnn", "large-gru", "tiny-tcn-head", "tiny-gru-head"])
def test_same_spec_same_init_and_logit_shape(family):
    spec = ModelSpec(family, (2, 8, 16), 2, width=8, depth=3, latent_dim=4, seed=3)
    a, b = build_model(spec), build_model(spec)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    other = build_model(ModelSpec(family, (2, 8, 16), 2, width=8, depth=3, latent_dim=4, seed=4))
    assert any(p.data.tobytes() != q.data.tobytes()
               for p, q in zip(a.parameters(), other.parameters()))
    x = np.random.default_rng(0).standard_normal((5, 2, 8, 16))
    assert predict_logits(a, x).shape == (5, 2)


def test_construction_errors():
    with pytest.raises(ValueError, match="needs at least"):
        build_model(ModelSpec("large-cnn", (2, 4, 4), 3, depth=3))
    with pytest.raises(ValueError, match="bottleneck"):
        build_model(ModelSpec("tiny-gru-head", (1, 4, 16), 3, latent_dim=4))
    with pytest.raises(ValueError):
        ModelSpec("resnet", (1, 2, 3), 2)
    with pytest.raises(ValueError):
        ModelSpec("large-cnn", (1, 2, 3), 1)
    enc = TcnEncoder((2, 4, 16), 3, 5, np.random.default_rng(0))
    head = build_head(ModelSpec("tiny-tcn-head", (2, 4, 16), 2, latent_dim=4),
                      np.random.default_rng(0))
    with pytest.raises(ValueError, match="latent_dim"):
        TinyClassifier(enc, head)


# ------------------------------------------------------------ clean training

@pytest.mark.parametrize("family", ["large-cnn"])
def test_two_class_synthetic_is_learned(two_class, family):
    net = build_model(ModelSpec(family, two_class.train.dims, 2, width=8))
    hist = train_clean(net, two_class, TrainHyper(max_epochs=50, min_epochs=5, patience=10,
                                                  lr=3e-3))
    assert len(hist) <= 50
    acc = np.mean(predict_logits(net, two_class.val.X).argmax(1) == two_class.val.y)
    assert acc >= 0.95


def test_gru_learns_two_class_synthetic(two_class):
    # the recurrent family converges more slowly; same budget, looser bar
    net = build_model(ModelSpec("large-gru", two_class.train.dims, 2, width=32))
    train_clean(net, two_class, TrainHyper(max_epochs=50, min_epochs=50, patience=10, lr=1e-2,
                                           batch_size=16, weight_decay=0.0))
    acc = np.mean(predict_logits(net, two_class.val.X).argmax(1) == two_class.val.y)
    assert acc >= 0.85


def test_single_batch_overfit():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((16, 2, 4, 16))
    y = rng.integers(0, 3, 16)
    ds = CsiDataset(X, y, 3)
    net = build_model(ModelSpec("large-cnn", (2, 4, 16), 3, width=8, depth=3))
    train_clean(net, SimpleNamespace(train=ds, val=ds),
                TrainHyper(max_epochs=200, min_epochs=200, patience=200, batch_size=16,
                           lr=1e-2, weight_decay=0.0))
    assert np.mean(predict_logits(net, X).argmax(1) == y) == 1.0


def test_early_stopping_schedule():
    stop = EarlyStopping(patience=5, min_epochs=7)
    epoch = 0
    while not stop.step(epoch, 1.0):
        epoch += 1
    assert epoch + 1 == 7 + 5
    stop = EarlyStopping(patience=2)
    assert [stop.step(e, v) for e, v in enumerate([3.0, 2.0, 2.5, 1.0, 1.5, 1.5])] == \
        [False, False, False, False, False, True]


def test_training_restores_best_and_detects_divergence(two_class):
    net = build_model(ModelSpec("large-cnn", two_class.train.dims, 2, width=4))
    hist = train_clean(net, two_class, TrainHyper(max_epochs=6, min_epochs=0, patience=2))
    best = min(h["val_loss"] for h in hist)
    assert training.evaluate_loss(net, two_class.val.X, two_class.val.y)[0] == pytest.approx(best)
    net.parameters()[0].data[...] = np.inf
    with pytest.raises(training.TrainingDivergedError, match="epoch 0"):
        train_clean(net, two_class, TrainHyper(max_epochs=3, patience=1, min_epochs=0))


def test_hyper_validation():
    with pytest.raises(ValueError):
        TrainHyper(lr=0)
    with pytest.raises(ValueError):
        TrainHyper(patience=10, max_epochs=5)


# ------------------------------------------------------------ autoencoder

def test_mask_focus_schedule():
    assert mask_focus(0.0) == 1.0
    assert mask_focus(0.2) == pytest.approx(0.5)
    assert mask_focus(0.4) == 0.0
    assert all(mask_focus(p) == 0.0 for p in (0.5, 0.75, 1.0))


def test_contiguous_masks(rng):
    m = contiguous_mask(rng, 50, 40, 0.1)
    assert m.shape == (50, 40)
    assert np.all(m.sum(1) == 4)
    assert np.all(np.abs(np.diff(m.astype(int), axis=1)).sum(1) <= 2)


def test_contractive_term_of_linear_encoder():
    rng = np.random.default_rng(0)
    n_in, n_out = 12, 12
    Q, _ = np.linalg.qr(rng.standard_normal((n_in, n_out)))
    W = 0.7 * Q  # equal singular values: every direction gives ||W||_F^2
    x = rng.standard_normal((5, 1, 3, 4))

    def encode(t):
        return F.matmul(F.reshape(t, (t.shape[0], -1)), W)
    pen = contractive_penalty(encode, x, rng).item()
    assert pen == pytest.approx(np.sum(W ** 2), rel=1e-9)
    # general W: unbiased over many samples
    G = rng.standard_normal((n_in, 4))
    xs = rng.standard_normal((4000, 1, 3, 4))
    est = contractive_penalty(lambda t: F.matmul(F.reshape(t, (t.shape[0], -1)), G), xs,
                              rng).item()
    assert est == pytest.approx(np.sum(G ** 2), rel=0.05)


def test_autoencoder_capacity():
    rng = np.random.default_rng(0)
    basis = np.random.default_rng(99).standard_normal((4, 64))
    t = np.arange(16) / 16
    z = rng.standard_normal((32, 4, 1)) + rng.standard_normal((32, 4, 1)) * t
    X = np.einsum("njt,jc->nct", z, basis).reshape(32, 8, 8, 16)
    X /= X.std()
    ds = CsiDataset(X, np.zeros(32, dtype=int), 2)
    ae = TcnAutoencoder((8, 8, 16), latent_dim=8, width=64, rng=np.random.default_rng(0))
    hist = pretrain_autoencoder(ae, SimpleNamespace(train=ds, val=ds), TrainHyper(
        max_epochs=300, min_epochs=300, patience=10, contractive_lambda=0.0, lr=3e-3,
        batch_size=32, weight_decay=0.0))
    with no_grad():
        mse = float(np.mean((ae(Tensor(X)).data - X) ** 2))
    assert mse < 1e-2
    assert hist[0]["mask_focus"] > 0 and hist[-1]["mask_focus"] == 0.0


# ------------------------------------------------------------ tiny models

def test_phase_a_freezes_encoder(small_split, monkeypatch):
    spec = ModelSpec("tiny-gru-head", small_split.train.dims, 4, width=8, latent_dim=4)
    net = build_model(spec)
    before = {n: p.data.copy() for n, p in net.encoder.named_parameters()}
    snapshots = []
    real = training.fit_epochs

    def spy(*args, **kw):
        out = real(*args, **kw)
        snapshots.append({n: p.data.copy() for n, p in net.encoder.named_parameters()})
        return out
    monkeypatch.setattr(training, "fit_epochs", spy)
    training.finetune_head(net, small_split, TrainHyper(phaseA_epochs=3, phaseB_epochs=2))
    assert len(snapshots) == 2
    for name, arr in before.items():
        assert snapshots[0][name].tobytes() == arr.tobytes()
    assert any(snapshots[1][n].tobytes() != before[n].tobytes() for n in before)


@pytest.mark.parametrize("family", ["tiny-gru-head", "tiny-tcn-head"])
def test_tiny_end_to_end(family):
    ds = synth_generate(ChannelParams(), 4, 30, (2, 8, 32), seed=2)
    sp, _ = normalize(split(ds, seed=2))
    clf = CsiClassifier(family, width=16, latent_dim=4, hyper=TrainHyper(
        max_epochs=30, min_epochs=5, patience=10, lr=3e-3, phaseA_epochs=10, phaseB_epochs=20))
    clf.fit(sp.train.X, sp.train.y, validation_data=(sp.val.X, sp.val.y), n_classes=4)
    assert macro_f1(clf.predict(sp.test.X), sp.test.y, 4).macro >= 0.9


# ------------------------------------------------------------ estimator

def test_estimator_interface(small_split):
    clf = CsiClassifier("large-cnn", width=4, depth=3, hyper=TrainHyper(max_epochs=3, min_epochs=0,
                                                               patience=2))
    assert clone(clf).get_params()["width"] == 4
    clf.fit(small_split.train.X, small_split.train.y)
    proba = clf.predict_proba(small_split.test.X)
    np.testing.assert_allclose(proba.sum(1), 1.0)
    assert clf.predict(small_split.test.X).shape == (len(small_split.test),)
    assert 0 <= clf.score(small_split.test.X, small_split.test.y) <= 1
    with pytest.raises(ValueError, match="shape"):
        clf.predict(np.zeros((2, 2, 8, 15)))
    wrapped = CsiClassifier.from_network(clf.network_)
    np.testing.assert_array_equal(wrapped.predict(small_split.test.X),
                                  clf.predict(small_split.test.X))


# ------------------------------------------------------------ checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    spec = ModelSpec("tiny-tcn-head", (2, 4, 16), 3, width=6, latent_dim=3, seed=2)
    net = build_model(spec)
    save_checkpoint(tmp_path / "m.ckpt", net, {"note": "x"})
    back, meta = load_checkpoint(tmp_path / "m.ckpt", expect_spec=spec)
    assert meta == {"note": "x"}
    x = rng.standard_normal((3, 2, 4, 16))
    assert predict_logits(back, x).tobytes() == predict_logits(net, x).tobytes()


def test_checkpoint_errors(tmp_path):
    spec = ModelSpec("large-gru", (1, 2, 8), 2, width=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, build_model(spec))
    good = path.read_bytes()
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(path, expect_spec=ModelSpec("large-gru", (1, 2, 8), 2, width=4))
    path.write_bytes(good[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(b"JUNK" + good[4:])
    with pytest.raises(CheckpointError, match="not a model"):
        load_checkpoint(path)
    path.write_bytes(good + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)
