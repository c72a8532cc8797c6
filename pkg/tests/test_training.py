import json

import numpy as np
import pytest

from eilab.autodiff import backward, grad_check
from eilab.groups import parse_group
from eilab.linops import make_dense_operator, make_mask_operator
from eilab.models import MLP, init_mlp, init_model, predict
from eilab.training import (
    HISTORY_HEADER,
    Adam,
    EpochRecord,
    TrainConfig,
    discriminator_loss,
    ei_adv_loss,
    ei_adv_step,
    ei_loss,
    ei_step,
    ei_sup_step,
    format_history,
    mc_loss,
    mc_step,
    sup_loss,
    sup_step,
    train,
)


def mse(a, b):
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


@pytest.fixture
def mask4():
    return make_mask_operator([True, False, True, True])


@pytest.fixture
def linear_model():
    """Single residual layer f(y) = u + W u + b with hand-picked weights."""
    W = np.array([[0.1, -0.2, 0.0, 0.3],
                  [0.5, 0.1, -0.4, 0.2],
                  [0.0, 0.3, 0.2, -0.1],
                  [-0.3, 0.0, 0.1, 0.4]])
    b = np.array([0.05, -0.1, 0.2, 0.0])
    return MLP([4, 4], [W, b], residual=True)


def straight_line_ei(model, A, y, g_shift, alpha, x=None):
    """EI loss evaluated with plain numpy, independent of the graph."""
    W, b = model.params

    def f(u):
        return u + u @ W.T + b

    Ainv = A.matrix.T  # mask: pseudo-inverse is the transpose
    x1 = f(y @ Ainv.T)
    x2 = np.roll(x1, g_shift, axis=-1)
    x3 = f((x2 @ A.matrix.T) @ Ainv.T)
    data = mse(x1 @ A.matrix.T, y) if x is None else mse(x1, x)
    eq = mse(x3, x2)
    return data, eq, data + alpha * eq


def test_ei_loss_matches_hand_evaluation(mask4, linear_model):
    G = parse_group("shift1d:4")
    y = np.array([[1.0, 0.5, -0.5], [0.2, 0.0, 0.7]])
    lg = ei_loss(linear_model, mask4, G, y, 1, 2.0)
    data, eq, total = straight_line_ei(linear_model, mask4, y, 1, 2.0)
    assert lg.value(lg.data) == pytest.approx(data, rel=1e-13)
    assert lg.value(lg.eq) == pytest.approx(eq, rel=1e-13)
    assert lg.value(lg.total) == pytest.approx(total, rel=1e-13)


def test_ei_sup_loss_matches_hand_evaluation(mask4, linear_model):
    G = parse_group("shift1d:4")
    x = np.array([[1.0, 0.3, 0.5, -0.5]])
    y = mask4.apply(x)
    lg = ei_loss(linear_model, mask4, G, y, 3, 0.5, x=x)
    data, eq, total = straight_line_ei(linear_model, mask4, y, 3, 0.5, x=x)
    assert lg.value(lg.data) == pytest.approx(data, rel=1e-13)
    assert lg.value(lg.total) == pytest.approx(total, rel=1e-13)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 7.0])
def test_loss_decomposition(alpha):
    A = make_mask_operator(np.arange(8) % 3 != 1)
    G = parse_group("shift1d:8")
    model = init_model(8, [10], seed=0)
    y = np.random.default_rng(0).standard_normal((3, A.m))
    lg = ei_loss(model, A, G, y, 5, alpha)
    assert abs(lg.value(lg.total) - (lg.value(lg.data) + alpha * lg.value(lg.eq))) <= 1e-12


def test_ei_step_uses_sampled_element(mask4, linear_model):
    G = parse_group("shift1d:4")
    y = np.array([[1.0, 0.5, -0.5]])
    g = G.sample(np.random.default_rng(42))
    expected = straight_line_ei(linear_model, mask4, y, g, 1.0)
    opt = Adam.for_model(linear_model, lr=1e-3)
    lmc, leq = ei_step(linear_model, mask4, G, y, 1.0, np.random.default_rng(42), opt)
    assert (lmc, leq) == pytest.approx(expected[:2], rel=1e-13)


def test_alpha_zero_matches_mc_step():
    A = make_mask_operator(np.arange(8) % 3 != 1)
    G = parse_group("shift1d:8")
    y = np.random.default_rng(1).standard_normal((4, A.m))
    m1, m2 = init_model(8, [10], seed=3), init_model(8, [10], seed=3)
    o1, o2 = Adam.for_model(m1), Adam.for_model(m2)
    for _ in range(3):
        ei_step(m1, A, G, y, 0.0, np.random.default_rng(0), o1)
        mc_step(m2, A, y, o2)
    assert all(np.array_equal(p, q) for p, q in zip(m1.params, m2.params))


def test_exact_inverse_has_zero_losses():
    # signals constant in the dropped coordinate direction: x = c * ones
    A = make_mask_operator([True, False, True, False])
    G = parse_group("shift1d:4")
    # f(y) fills dropped entries with the mean of kept ones; exact on constant signals
    W = np.zeros((4, 4))
    W[1, [0, 2]] = 0.5
    W[3, [0, 2]] = 0.5
    model = MLP([4, 4], [W, np.zeros(4)], residual=True)
    x = np.array([[2.0] * 4, [-1.0] * 4])
    y = A.apply(x)
    for g in range(4):
        lg = ei_loss(model, A, G, y, g, 1.0)
        assert lg.value(lg.data) == 0.0
        assert lg.value(lg.eq) == 0.0
    lg = ei_loss(model, A, G, y, 1, 1.0, x=x)
    assert lg.value(lg.data) == 0.0 and lg.value(lg.eq) == 0.0


def test_zero_model_mask_mc_loss_zero():
    A = make_mask_operator(np.arange(10) % 4 != 0)
    y = np.random.default_rng(2).standard_normal((3, A.m))
    lg = mc_loss(init_model(10, [5], seed=0).zeroed(), A, y)
    assert lg.value(lg.data) == 0.0


def nullspace_model(model: MLP, A) -> MLP:
    """Project the last layer onto the nullspace so G_res(u) lies in N_A."""
    Q = np.eye(A.n) - A.projector
    params = list(model.params)
    params[-2] = Q @ params[-2]
    params[-1] = Q @ params[-1]
    return MLP(model.dims, params, model.residual)


def test_nullspace_valued_residual_is_measurement_consistent():
    A = make_dense_operator(np.random.default_rng(3).standard_normal((3, 8)))
    model = nullspace_model(init_model(8, [16], seed=1), A)
    y = np.random.default_rng(4).standard_normal((5, 3))
    lg = mc_loss(model, A, y)
    assert lg.value(lg.data) <= 1e-12


def test_mc_loss_matches_direct_evaluation():
    A = make_dense_operator(np.random.default_rng(5).standard_normal((4, 6)))
    model = init_model(6, [9], seed=2)
    y = np.random.default_rng(6).standard_normal((3, 4))
    W1, b1, W2, b2 = model.params
    u = A.pinv_apply(y)
    h = u @ W1.T + b1
    h = np.where(h > 0, h, 0.01 * h)
    x1 = u + h @ W2.T + b2
    lg = mc_loss(model, A, y)
    assert abs(lg.value(lg.data) - mse(A.apply(x1), y)) <= 1e-12


def test_sup_loss_zero_model_is_dropped_energy():
    A = make_mask_operator([True, False, True, False, True, True])
    x = np.random.default_rng(7).standard_normal((4, 6))
    lg = sup_loss(init_model(6, [4]).zeroed(), A, A.apply(x), x)
    expected = float(np.sum(x[:, ~A.keep] ** 2) / x.size)
    assert lg.value(lg.data) == pytest.approx(expected, rel=1e-14)


def test_sup_loss_perfect_model():
    A = make_mask_operator([True, False, True])
    x = np.array([[1.0, 1.0, 1.0]])
    W = np.zeros((3, 3))
    W[1, [0, 2]] = 0.5
    lg = sup_loss(MLP([3, 3], [W, np.zeros(3)]), A, A.apply(x), x)
    assert lg.value(lg.data) == 0.0


def test_sup_gradient_check():
    A = make_mask_operator([True, False, True, True, False])
    model = init_model(5, [7], seed=8)
    x = np.random.default_rng(9).standard_normal((2, 5))
    lg = sup_loss(model, A, A.apply(x), x)
    for p in lg.params:
        assert grad_check(lg.graph, lg.total, p, 1e-5) <= 1e-4


def test_ei_sup_alpha_zero_equals_sup_step():
    A = make_mask_operator(np.arange(8) % 2 == 0)
    G = parse_group("shift1d:8")
    x = np.random.default_rng(10).standard_normal((3, 8))
    m1, m2 = init_model(8, [6], seed=1), init_model(8, [6], seed=1)
    o1, o2 = Adam.for_model(m1), Adam.for_model(m2)
    l1, _ = ei_sup_step(m1, A, G, A.apply(x), x, 0.0, np.random.default_rng(0), o1)
    l2 = sup_step(m2, A, A.apply(x), x, o2)
    assert l1 == l2
    assert all(np.array_equal(p, q) for p, q in zip(m1.params, m2.params))


# -- adversarial ---------------------------------------------------------------

def test_adv_beta_zero_matches_ei_step():
    A = make_mask_operator(np.arange(8) % 3 != 0)
    G = parse_group("shift1d:8")
    y = np.random.default_rng(11).standard_normal((4, A.m))
    m1, m2 = init_model(8, [6], seed=2), init_model(8, [6], seed=2)
    disc = init_mlp([8, 5, 1], np.random.default_rng(0), residual=False)
    o1, o2, od = Adam.for_model(m1), Adam.for_model(m2), Adam.for_model(disc)
    ei_adv_step(m1, disc, A, G, y, 1.0, 0.0, np.random.default_rng(5), o1, od)
    ei_step(m2, A, G, y, 1.0, np.random.default_rng(5), o2)
    assert all(np.array_equal(p, q) for p, q in zip(m1.params, m2.params))


def test_constant_discriminator_adds_no_gradient():
    A = make_mask_operator(np.arange(8) % 3 != 0)
    G = parse_group("shift1d:8")
    y = np.random.default_rng(12).standard_normal((3, A.m))
    model = init_model(8, [6], seed=3)
    d = init_mlp([8, 4, 1], np.random.default_rng(1), residual=False)
    const = MLP(d.dims, [np.zeros_like(p) for p in d.params[:-1]] + [np.array([0.7])], residual=False)
    with_adv = ei_adv_loss(model, const, A, G, y, 2, 1.0, 5.0)
    plain = ei_loss(model, A, G, y, 2, 1.0)
    ga = backward(with_adv.graph, with_adv.total)
    gp = backward(plain.graph, plain.total)
    assert with_adv.value(with_adv.adv) == pytest.approx(1.0)
    for pa, pp in zip(with_adv.params, plain.params):
        np.testing.assert_allclose(ga[pa], gp[pp], rtol=0, atol=1e-15)


def test_adversarial_round_matches_straight_line(mask4, linear_model):
    G = parse_group("shift1d:4")
    y = np.array([[1.0, 0.5, -0.5], [0.2, 0.0, 0.7]])
    w = np.array([[0.3, -0.1, 0.2, 0.5]])
    c = np.array([0.1])
    disc = MLP([4, 1], [w, c], residual=False)
    lr, alpha, beta = 0.01, 1.0, 0.5
    rng_seed = 3
    g = G.sample(np.random.default_rng(rng_seed))

    # straight-line discriminator update: LS loss, first Adam step
    W, b = linear_model.params
    x1 = y @ mask4.matrix + (y @ mask4.matrix) @ W.T + b
    x2 = np.roll(x1, g, axis=-1)
    d1 = x1 @ w[0] + c[0]
    d2 = x2 @ w[0] + c[0]
    B = x1.shape[0]
    gw = (2 / B) * ((d1 - 1) @ x1 + d2 @ x2)
    gc = (2 / B) * (np.sum(d1 - 1) + np.sum(d2))
    w_new = w[0] - lr * gw / (np.abs(gw) + 1e-8)
    c_new = c[0] - lr * gc / (abs(gc) + 1e-8)
    d_loss = np.mean((d1 - 1) ** 2) + np.mean(d2 ** 2)

    data, eq, _ = straight_line_ei(linear_model, mask4, y, g, alpha)
    adv = np.mean(x1 @ w_new + c_new) + 1 - np.mean(x2 @ w_new + c_new)

    opt, dopt = Adam.for_model(linear_model, lr=lr), Adam.for_model(disc, lr=lr)
    lmc, leq, ladv, ld = ei_adv_step(linear_model, disc, mask4, G, y, alpha, beta,
                                     np.random.default_rng(rng_seed), opt, dopt)
    np.testing.assert_allclose(disc.params[0][0], w_new, rtol=1e-12)
    np.testing.assert_allclose(disc.params[1][0], c_new, rtol=1e-12)
    assert ld == pytest.approx(d_loss, rel=1e-12)
    assert (lmc, leq) == pytest.approx((data, eq), rel=1e-12)
    assert ladv == pytest.approx(adv, rel=1e-12)


def test_discriminator_loss_targets():
    disc = MLP([2, 1], [np.zeros((1, 2)), np.array([1.0])], residual=False)
    g, _, loss = discriminator_loss(disc, np.ones((3, 2)), np.ones((3, 2)))
    # D == 1 everywhere: zero error on x1, unit error on x2
    assert g.value(loss)[0] == 1.0


# -- invariants ---------------------------------------------------------------

def test_forward_model_transformation_identity():
    A = make_mask_operator(np.arange(16) % 3 != 0)
    G = parse_group("shift2d:4x4")
    rng = np.random.default_rng(13)
    for g in range(G.order):
        x = rng.standard_normal((4, 4))
        back = G.act(g, G.act(G.inverse(g), x))
        assert np.array_equal(A.apply(x.ravel()), A.apply(back.ravel()))


def test_full_ei_loss_gradient_check():
    A = make_mask_operator(np.array([1, 1, 0, 1, 0, 1, 1, 0], dtype=bool))
    G = parse_group("shift1d:8")
    model = init_model(8, [16, 16], seed=4)
    y = np.random.default_rng(14).standard_normal((2, A.m))
    lg = ei_loss(model, A, G, y, 3, 1.5)
    for p in lg.params:
        assert grad_check(lg.graph, lg.total, p, 1e-5) <= 1e-4


# -- config / loop ---------------------------------------------------------------

def test_lr_schedule_step_decay():
    cfg = TrainConfig(lr=1e-3, lr_decay_factor=0.1, lr_decay_period=5)
    assert cfg.lr_at(4) == 1e-3
    assert cfg.lr_at(5) == 1e-3 * 0.1
    assert cfg.lr_at(10) == 1e-3 * 0.1 ** 2


def test_config_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        TrainConfig(regime="gan")
    with pytest.raises(ValueError):
        TrainConfig(alpha=-1)
    with pytest.raises(ValueError, match="unknown config keys"):
        TrainConfig.from_dict({"regime": "ei", "gamma": 1})
    cfg = TrainConfig(regime="ei-sup", alpha=10.0, hidden=[8], group="shift1d:8")
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert TrainConfig.load(tmp_path / "c.json") == cfg
    assert json.loads(cfg.to_json())["alpha"] == 10.0


def _toy():
    from eilab.datasets import gen_triangle_dataset

    ds = gen_triangle_dataset(8, 20, True, seed=0)
    ytr, xtr = ds.split("train")
    yte, xte = ds.split("test")
    return ds.operator, parse_group("shift1d:8"), ytr, xtr, yte, xte


def test_zero_epochs_returns_initial_model():
    A, G, ytr, xtr, yte, xte = _toy()
    cfg = TrainConfig(regime="ei", epochs=0, hidden=[4], seed=7)
    model, history = train(cfg, A, G, ytr, xtr, yte, xte)
    assert history == []
    ref = init_mlp([8, 4, 8], np.random.default_rng([7, 0]))
    assert all(np.array_equal(p, q) for p, q in zip(model.params, ref.params))


@pytest.mark.parametrize("regime", ["mc", "ei", "sup", "ei-sup", "ei-adv"])
def test_training_deterministic(regime):
    A, G, ytr, xtr, yte, xte = _toy()
    cfg = TrainConfig(regime=regime, epochs=3, batch_size=4, hidden=[6], seed=1)
    m1, h1 = train(cfg, A, G, ytr, xtr, yte, xte)
    m2, h2 = train(cfg, A, G, ytr, xtr, yte, xte)
    assert format_history(h1) == format_history(h2)
    assert all(np.array_equal(p, q) for p, q in zip(m1.params, m2.params))
    for r in h1:
        assert r.loss_mc >= 0 and np.isfinite(r.loss_mc)
        if regime != "mc" and regime != "sup":
            assert r.loss_eq >= 0
        assert (r.loss_adv is not None) == (regime == "ei-adv")


def test_training_reduces_loss():
    A, G, ytr, xtr, yte, xte = _toy()
    cfg = TrainConfig(regime="mc", epochs=30, batch_size=4, hidden=[16], lr=1e-2)
    _, h = train(cfg, A, G, ytr, xtr, yte, xte)
    assert h[-1].loss_mc < h[0].loss_mc


def test_sup_regime_requires_signals():
    A, G, ytr, *_ = _toy()
    with pytest.raises(ValueError):
        train(TrainConfig(regime="sup", epochs=1), A, G, ytr)
    with pytest.raises(ValueError):
        train(TrainConfig(regime="ei", epochs=1), A, None, ytr)
    with pytest.raises(ValueError):
        train(TrainConfig(regime="mc", epochs=1), A, None, np.zeros((0, A.m)))


def test_group_from_config():
    A, _, ytr, xtr, *_ = _toy()
    cfg = TrainConfig(regime="ei", epochs=1, group="shift1d:8", hidden=[4])
    _, h = train(cfg, A, None, ytr, xtr)
    assert h[0].psnr_train is not None and h[0].psnr_test is None


def test_history_csv_format():
    h = [EpochRecord(1, 0.5, None, None, 20.0, None), EpochRecord(2, 0.25, 0.1, None, None, None)]
    lines = format_history(h).splitlines()
    assert lines[0] == HISTORY_HEADER
    assert lines[1] == "1,0.5,,,20,"
    assert lines[2] == "2,0.25,0.10000000000000001,,,"


def test_predict_after_training_finite():
    A, G, ytr, xtr, yte, xte = _toy()
    model, _ = train(TrainConfig(regime="ei", epochs=2, hidden=[5]), A, G, ytr, xtr)
    assert np.all(np.isfinite(predict(model, A, yte)))
