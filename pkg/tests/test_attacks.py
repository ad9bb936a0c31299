import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from csirobust.attacks import (PSR_SENTINEL, AttackBudget, AttackSpec, deepfool,
                               load_adversarial_batch, measure_psr, pgd, project_l2, run_attack,
                               save_adversarial_batch, snr_to_eps, transfer_eval, uap)
from csirobust.data import write_csib
from csirobust.models import LinearNet
from csirobust.physcon import PhysConfig

DIMS = (1, 2, 3)


def _linear(W, b=None):
    W = np.asarray(W, dtype=np.float64)
    return LinearNet(W, np.zeros(W.shape[1]) if b is None else b, DIMS)


def _snr_for(eps, x):
    return -20.0 * np.log10(eps / np.linalg.norm(x))


@pytest.fixture(scope="module")
def logreg_net(small_split):
    tr = small_split.train
    clf = LogisticRegression(C=10.0, max_iter=2000).fit(tr.X.reshape(len(tr), -1), tr.y)
    return LinearNet(clf.coef_.T, clf.intercept_, tr.X.shape[1:])


# ------------------------------------------------------------ budget and PSR

def test_snr_to_eps_examples():
    x = np.zeros(DIMS)
    x[0, 0, 0] = 1.0
    assert snr_to_eps(20, x) == pytest.approx(0.1)
    assert snr_to_eps(0, x) == pytest.approx(1.0)
    x[0, 0, 0] = 50.0
    assert snr_to_eps(40, x) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        snr_to_eps(20, np.zeros(DIMS))


def test_psr_examples(rng):
    x = rng.standard_normal(DIMS)
    assert measure_psr(x, 0.1 * x) == pytest.approx(-20)
    assert measure_psr(x, x) == pytest.approx(0.0, abs=1e-12)
    assert measure_psr(x, 2 * x) == pytest.approx(6.0206, abs=1e-4)
    assert measure_psr(x, np.zeros(DIMS)) == PSR_SENTINEL
    batch = measure_psr(np.stack([x, x]), np.stack([x, np.zeros(DIMS)]))
    np.testing.assert_allclose(batch, [0.0, PSR_SENTINEL], atol=1e-12)


@given(st.floats(0, 80), st.floats(0.1, 100))
def test_psr_of_eps_is_minus_snr(snr, scale):
    x = np.full(DIMS, scale)
    eps = snr_to_eps(snr, x)
    d = np.zeros(DIMS)
    d[0, 1, 2] = eps
    assert measure_psr(x, d) == pytest.approx(-snr, abs=1e-9)


@pytest.mark.parametrize("kw", [dict(snr_db=-1), dict(snr_db=81), dict(steps=0),
                                dict(restarts=0), dict(mode="sideways")])
def test_budget_validation(kw):
    with pytest.raises(ValueError):
        AttackBudget(**kw)


def test_project_l2_does_not_inflate(rng):
    d = rng.standard_normal((3,) + DIMS)
    n = np.linalg.norm(d.reshape(3, -1), axis=1)
    out = project_l2(d, np.array([n[0] * 2, n[1] / 2, n[2]]))
    np.testing.assert_allclose(out[0], d[0])
    assert np.linalg.norm(out[1]) == pytest.approx(n[1] / 2)


# ------------------------------------------------------------ PGD

def _binary_case(rng):
    W = rng.standard_normal((6, 2))
    x = rng.standard_normal((1,) + DIMS)
    f = x.reshape(1, -1) @ W
    y = np.array([int(f.argmax())])
    w = W[:, 1 - y[0]] - W[:, y[0]]
    dist = abs(f[0, 0] - f[0, 1]) / np.linalg.norm(w)
    return W, x, y, w, dist


@pytest.mark.parametrize("case", range(5))
def test_pgd_linear_oracle(case):
    rng = np.random.default_rng(case)
    W, x, y, w, dist = _binary_case(rng)
    net = _linear(W)
    if dist > 0.5 * np.linalg.norm(x):
        pytest.skip("margin too large for a budget below 0 dB")
    win = pgd(net, x, y, AttackBudget(_snr_for(1.5 * dist, x), steps=30, restarts=2), seed=1)
    assert win.success[0]
    # the ascent direction is the closed-form one: along w_k - w_y
    cos = win.delta.ravel() @ w / (np.linalg.norm(win.delta) * np.linalg.norm(w))
    assert cos > 0.99
    lose = pgd(net, x, y, AttackBudget(_snr_for(0.5 * dist, x), steps=30, restarts=2), seed=1)
    assert not lose.success[0]


def test_pgd_zero_budget_keeps_prediction(logreg_net, small_split):
    te = small_split.test
    pert = pgd(logreg_net, te.X, te.y, AttackBudget(80, steps=5, restarts=1))
    np.testing.assert_array_equal(pert.adv_pred, pert.clean_pred)
    assert not pert.success[pert.clean_pred == te.y].any()


def test_pgd_restart_selection_is_max(logreg_net, small_split):
    te = small_split.test
    pert = pgd(logreg_net, te.X, te.y, AttackBudget(30, steps=4, restarts=4), seed=3)
    losses, best = pert.info["restart_losses"], pert.info["best_loss"]
    assert np.all(best[:, None] >= losses - 1e-15)
    np.testing.assert_array_equal(best, losses.max(1))


def test_pgd_is_independent_of_batching(logreg_net, small_split):
    te = small_split.test
    budget = AttackBudget(20, steps=5, restarts=2)
    full = pgd(logreg_net, te.X, te.y, budget, seed=9)
    for i in (0, 5, len(te) - 1):
        one = pgd(logreg_net, te.X[i:i + 1], te.y[i:i + 1], budget, seed=9, sample_ids=[i])
        np.testing.assert_allclose(one.delta[0], full.delta[i], rtol=0, atol=1e-12)


def test_targeted_attack_reaches_target(logreg_net, small_split):
    te = small_split.test
    budget = AttackBudget(0, steps=30, restarts=1, mode="targeted")
    pert = pgd(logreg_net, te.X, te.y, budget)
    tgt = (te.y + 1) % 4
    np.testing.assert_array_equal(pert.info["targets"], tgt)
    np.testing.assert_array_equal(pert.success, pert.adv_pred == tgt)
    assert pert.success.mean() > 0.5
    with pytest.raises(ValueError, match="target class"):
        pgd(logreg_net, te.X, te.y, AttackBudget(20, mode="targeted", target_class=0))


def test_sign_step_flag_changes_direction(logreg_net, small_split):
    te = small_split.test
    b = AttackBudget(20, steps=3, restarts=1)
    a = pgd(logreg_net, te.X, te.y, b, seed=0)
    s = pgd(logreg_net, te.X, te.y, b, seed=0, sign_step=True)
    assert not np.allclose(a.delta, s.delta)


@settings(max_examples=100)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["pgd", "pgd-corr", "deepfool"]),
       st.floats(0, 40))
def test_budget_compliance_scan(seed, kind, snr):
    rng = np.random.default_rng(seed)
    net = _linear(rng.standard_normal((6, 3)), rng.standard_normal(3))
    X = rng.standard_normal((3,) + DIMS)
    y = rng.integers(0, 3, 3)
    spec = AttackSpec(kind, AttackBudget(snr, steps=3, restarts=2), df_max_iter=20)
    pert = run_attack(net, X, y, spec, seed=seed)
    eps = snr_to_eps(snr, X)
    assert np.all(pert.norms() <= eps + 1e-9)


# ------------------------------------------------------------ DeepFool

def test_deepfool_two_class_closed_form(rng):
    W, x, _, _, _ = _binary_case(rng)
    net = _linear(W)
    f = (x.reshape(1, -1) @ W)[0]
    yh = int(f.argmax())
    k = 1 - yh
    w = W[:, k] - W[:, yh]
    expected = (f[yh] - f[k] + 1e-6) / (w @ w) * w * 1.02
    pert = deepfool(net, x)
    np.testing.assert_allclose(pert.delta.ravel(), expected, rtol=1e-9)
    assert pert.iterations_used[0] == 1 and pert.success[0]
    # without the nudge this is exactly ((f_y - f_k) / ||w||^2) w scaled by 1.02
    assert np.linalg.norm(expected) == pytest.approx(
        1.02 * (f[yh] - f[k]) / np.linalg.norm(w), rel=1e-4)


def test_deepfool_on_boundary():
    W = np.zeros((6, 2))
    W[0] = [1.0, -1.0]
    x = np.zeros((1,) + DIMS)
    x[0, 0, 1, 2] = 1.0  # feature 0 is zero: logits tie
    pert = deepfool(_linear(W), x)
    assert pert.success[0] and pert.iterations_used[0] <= 1
    assert np.linalg.norm(pert.delta) < 1e-5


def test_deepfool_skips_degenerate_rivals():
    W = np.zeros((6, 2))  # identical class scores everywhere
    pert = deepfool(_linear(W), np.ones((2,) + DIMS))
    assert not pert.success.any()
    assert pert.info["failed"].all()


def test_deepfool_norm_grows_with_margin():
    W = np.zeros((6, 2))
    W[0] = [1.0, -1.0]
    norms = []
    for m in (0.1, 0.5, 1.0, 2.0):
        x = np.full((1,) + DIMS, 0.1)
        x[0, 0, 0, 0] = m
        norms.append(float(np.linalg.norm(deepfool(_linear(W), x).delta)))
    assert np.all(np.diff(norms) > 0)


def test_deepfool_success_means_label_change(logreg_net, small_split):
    pert = deepfool(logreg_net, small_split.test.X, snr_db=20)
    assert np.all(pert.adv_pred[pert.success] != pert.clean_pred[pert.success])
    assert np.all(pert.norms() <= pert.eps + 1e-9)


# ------------------------------------------------------------ UAP

def test_uap_vacuous_target(logreg_net, small_split):
    out = uap(logreg_net, small_split.train.X, 20, fooling_target=0.0)
    assert not out.v.any() and out.passes_used == 0
    assert out.fooling_rate == 0.0


@pytest.mark.parametrize("aggregate,preserve", [(False, False), (True, False), (True, True)])
def test_uap_norm_audit(logreg_net, small_split, aggregate, preserve):
    out = uap(logreg_net, small_split.train.X, 10, passes=2, aggregate=aggregate,
              preserve_corr=preserve, physcfg=PhysConfig(), seed=4)
    assert out.norm_history
    assert max(out.norm_history) <= out.xi * (1 + 1e-12)
    assert out.fooling_rate == out.fooling_history[-1]
    assert 0 <= out.fooling_rate <= 1
    if not aggregate:
        assert out.fooling_rate > 0


def test_uap_empty_dataset(logreg_net):
    with pytest.raises(ValueError):
        uap(logreg_net, np.zeros((0, 2, 8, 16)), 20)


# ------------------------------------------------------------ transfer

def test_self_transfer_equals_white_box(logreg_net, small_split):
    te = small_split.test
    res = transfer_eval(logreg_net, logreg_net, te.X, te.y, AttackSpec(
        "pgd", AttackBudget(20, steps=5, restarts=1)))
    assert res.asr == res.white_box_asr
    assert res.tag == "intra-family"


def test_zero_budget_transfer(logreg_net, small_split):
    te = small_split.test
    other = LinearNet(logreg_net.weight.data * 1.1, logreg_net.bias.data, te.X.shape[1:])
    res = transfer_eval(logreg_net, other, te.X, te.y, AttackSpec(
        "pgd", AttackBudget(80, steps=3, restarts=1)))
    assert res.asr == pytest.approx(0.0, abs=1e-12)


def test_transfer_shape_mismatch(logreg_net, small_split):
    te = small_split.test
    other = LinearNet(np.zeros((10, 4)), np.zeros(4), (1, 2, 5))
    with pytest.raises(ValueError, match="input"):
        transfer_eval(logreg_net, other, te.X, te.y, AttackSpec())


def test_adversarial_batch_replay(tmp_path, logreg_net, small_split):
    te = small_split.test
    spec = AttackSpec("pgd", AttackBudget(15, steps=4, restarts=1))
    pert = run_attack(logreg_net, te.X, te.y, spec)
    save_adversarial_batch(tmp_path / "adv.csib", te.X, pert, te.y, 4)
    ds, idx = load_adversarial_batch(tmp_path / "adv.csib")
    np.testing.assert_array_equal(idx, np.arange(len(te)))
    np.testing.assert_allclose(ds.X, (te.X + pert.delta).astype(np.float32), rtol=0, atol=0)
    write_csib(te, tmp_path / "plain.csib")
    with pytest.raises(ValueError, match="not an adversarial"):
        load_adversarial_batch(tmp_path / "plain.csib")
    replay = transfer_eval(logreg_net, logreg_net, te.X, te.y, spec, perturbation=pert)
    assert replay.perturbation is pert
    with pytest.raises(ValueError, match="shape"):
        transfer_eval(logreg_net, logreg_net, te.X[:3], te.y[:3], spec, perturbation=pert)
