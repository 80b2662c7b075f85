import math

import numpy as np
import pytest

from neuralmap.predictor import (Dataset, Divergence, ElevationEstimate, GatedNet, ShapeMismatch, TrainConfig,
                                 baseline_predict, beta_nll, evaluate, predict, total_variation, train, tv_weights)
from neuralmap.predictor.loss import LOGVAR_MAX, LOGVAR_MIN
from neuralmap.sensing import LocalGrid


def fixed_weight_nll(mean, s, y, w):
    """Reference loss with the variance weight held as a given constant."""
    return float(np.mean(w * (0.5 * s + 0.5 * (y - mean) ** 2 * np.exp(-s))))


def test_loss_zero_at_perfect_unit_variance():
    y = np.random.default_rng(0).normal(size=(4, 4))
    loss, _, _ = beta_nll(y, np.zeros((4, 4)), y)
    assert loss == 0.0


def test_loss_half_log_e_beta_zero():
    y = np.zeros((4, 4))
    loss, _, _ = beta_nll(y, np.ones((4, 4)), y, beta=0.0)
    assert loss == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
def test_gradient_matches_finite_differences(beta):
    rng = np.random.default_rng(1)
    m, s, y = rng.normal(size=(3, 4, 4))
    _, gm, gs = beta_nll(m, s, y, beta=beta)
    w = np.exp(beta * s)
    h = 1e-5
    for idx in np.ndindex(4, 4):
        e = np.zeros((4, 4))
        e[idx] = h
        fd_m = (fixed_weight_nll(m + e, s, y, w) - fixed_weight_nll(m - e, s, y, w)) / (2 * h)
        fd_s = (fixed_weight_nll(m, s + e, y, w) - fixed_weight_nll(m, s - e, y, w)) / (2 * h)
        assert gm[idx] == pytest.approx(fd_m, rel=1e-4, abs=1e-9)
        assert gs[idx] == pytest.approx(fd_s, rel=1e-4, abs=1e-9)


def test_beta_gradient_is_scaled_beta_zero_gradient():
    rng = np.random.default_rng(2)
    m, s, y = rng.normal(size=(3, 5, 5))
    _, gm0, gs0 = beta_nll(m, s, y, beta=0.0)
    _, gm, gs = beta_nll(m, s, y, beta=0.5)
    w = np.exp(0.5 * s)
    assert np.allclose(gm, w * gm0, rtol=1e-14, atol=0)
    assert np.allclose(gs, w * gs0, rtol=1e-14, atol=0)


def test_loss_masks_invalid_cells():
    y = np.zeros((4, 4))
    valid = np.zeros((4, 4), bool)
    valid[0, 0] = True
    m = np.full((4, 4), 100.0)
    m[0, 0] = 0.0
    loss, gm, _ = beta_nll(m, np.zeros((4, 4)), y, valid)
    assert loss == 0.0 and np.all(gm == 0)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        beta_nll(np.zeros((4, 4)), np.zeros((4, 3)), np.zeros((4, 4)))


def test_tv_hand_example():
    y = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert total_variation(y)[0] == 0.5


def test_tv_constant_batch_zero_weights():
    w = tv_weights(np.ones((3, 4, 4)))
    assert np.all(w == 0)


def test_tv_identical_samples_equal_weights():
    y = np.random.default_rng(0).normal(size=(4, 4))
    w = tv_weights(np.stack([y] * 5))
    assert np.all(w == w[0]) and w.sum() <= 1


def test_tv_weights_sum():
    labels = np.random.default_rng(3).normal(size=(8, 6, 6))
    tv = total_variation(labels)
    w = tv_weights(labels, 1e-6)
    assert w.sum() == pytest.approx(tv.sum() / (tv.sum() + 1e-6), abs=1e-15)
    assert w.sum() <= 1


def test_tv_respects_validity():
    y = np.array([[0.0, 5.0], [0.0, 0.0]])
    valid = np.array([[True, False], [True, True]])
    assert total_variation(y, valid)[0] == 0.0


def test_estimate_clamps_log_variance():
    est = ElevationEstimate(np.zeros(3), np.array([-50.0, 0.0, 50.0]))
    assert est.log_variance[0] == LOGVAR_MIN and est.log_variance[2] == LOGVAR_MAX


def small_net(dtype=np.float64, rows=9, cols=7):
    return GatedNet(rows, cols, widths=(3, 4, 4), seed=0, dtype=dtype)


def random_grid(rows, cols, seed=0):
    rng = np.random.default_rng(seed)
    valid = rng.random((rows, cols)) > 0.3
    elev = np.where(valid, rng.normal(-0.5, 0.2, (rows, cols)), -10.0)
    return LocalGrid(elev, valid, 0.04)


def test_gate_zero_passes_input():
    net = small_net()
    net.params["head.w"][:] = 0
    net.params["head.b"][:] = [1.0, -1e4, 0.0]
    g = random_grid(9, 7)
    est = predict(net, g)
    assert np.array_equal(est.mean, g.filled())


def test_gate_one_passes_raw():
    net = small_net()
    net.params["head.w"][:] = 0
    net.params["head.b"][:] = [0.25, 1e4, 0.0]
    est = predict(net, random_grid(9, 7))
    assert np.all(est.mean == 0.25)


def test_mean_is_convex_combination():
    net = small_net()
    g = random_grid(9, 7, 3)
    mean, log_var, cache = net.forward(g.filled(), g.valid)
    lo = np.minimum(cache["raw"], cache["elev"])
    hi = np.maximum(cache["raw"], cache["elev"])
    assert np.all(mean >= lo - 1e-12) and np.all(mean <= hi + 1e-12)
    assert np.all(log_var >= LOGVAR_MIN) and np.all(log_var <= LOGVAR_MAX)


def test_predict_deterministic():
    net = GatedNet(31, 31)
    g = random_grid(31, 31)
    a, b = predict(net, g), predict(net, g)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.log_variance, b.log_variance)


def test_predict_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        predict(GatedNet(31, 31), random_grid(51, 31))


def test_default_net_is_small():
    assert GatedNet(31, 31).parameter_count <= 200_000


def test_network_backward_matches_finite_differences():
    net = small_net()
    g = random_grid(9, 7, 1)
    y = np.random.default_rng(2).normal(-0.5, 0.2, (1, 9, 7))
    elev, valid = g.filled()[None], g.valid[None]

    def loss_of(params):
        saved = net.params
        net.params = params
        m, s, _ = net.forward(elev, valid)
        net.params = saved
        return float(beta_nll(m, s, y, beta=0.0)[0][0])

    m, s, cache = net.forward(elev, valid)
    _, gm, gs = beta_nll(m, s, y, beta=0.0)
    grads = net.backward(gm, gs, cache)
    rng = np.random.default_rng(4)
    h = 1e-6
    for name, p in net.params.items():
        for _ in range(3):
            idx = tuple(rng.integers(0, n) for n in p.shape)
            plus = {k: v.copy() for k, v in net.params.items()}
            minus = {k: v.copy() for k, v in net.params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (loss_of(plus) - loss_of(minus)) / (2 * h)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-8), name


def test_baseline_fully_valid():
    g = random_grid(9, 7)
    g = LocalGrid(g.elevations, np.ones(g.shape, bool), 0.04)
    est = baseline_predict(g)
    assert np.array_equal(est.mean, g.elevations)
    assert np.allclose(est.variance, 0.01, rtol=1e-12)


def test_baseline_all_invalid():
    g = LocalGrid(np.full((5, 5), -10.0), np.zeros((5, 5), bool), 0.04)
    est = baseline_predict(g)
    assert np.all(est.mean == 0) and np.allclose(est.variance, 25.0)


def test_baseline_single_cell():
    valid = np.zeros((6, 6), bool)
    valid[2, 3] = True
    elev = np.where(valid, 0.42, -10.0)
    est = baseline_predict(LocalGrid(elev, valid, 0.04))
    assert np.all(est.mean == 0.42)
    # variance grows with squared fill distance in meters
    assert est.variance[2, 5] == pytest.approx(0.01 + (2 * 0.04) ** 2)


def tiny_dataset(n, rows=9, cols=7, seed=0):
    rng = np.random.default_rng(seed)
    label = rng.normal(-0.5, 0.1, (n, rows, cols))
    valid = rng.random((n, rows, cols)) > 0.3
    return Dataset(np.where(valid, label, -10.0), valid, label, np.ones((n, rows, cols), bool), 0.04)


def test_train_overfits_one_sample():
    data = tiny_dataset(1)
    cfg = TrainConfig(epochs=60, batch_size=1, widths=(4, 4, 4), lr_decay=1.0, tv_reweight=False)
    net0 = GatedNet(9, 7, cfg.widths, seed=cfg.seed)
    initial = evaluate(net0, data)
    net, curve = train(data, cfg)
    assert evaluate(net, data) < initial
    assert curve[-1][1] < curve[0][1]


def test_train_deterministic():
    data = tiny_dataset(6)
    cfg = TrainConfig(epochs=2, batch_size=4, widths=(4, 4, 4))
    a, ca = train(data, cfg)
    b, cb = train(data, cfg)
    assert [r[:2] for r in ca] == [r[:2] for r in cb]
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_train_divergence_on_non_finite_labels():
    data = tiny_dataset(2)
    data.label_elev[0, 0, 0] = np.nan
    with pytest.raises(Divergence):
        train(data, TrainConfig(epochs=1, widths=(4, 4, 4)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(beta=1.5)
    with pytest.raises(ValueError):
        TrainConfig(tv_epsilon=0.0)


def test_dataset_split():
    tr, va = tiny_dataset(10).split(0.8)
    assert len(tr) == 8 and len(va) == 2
    assert math.isclose(tr.resolution, 0.04)
