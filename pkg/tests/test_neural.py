import math

import numpy as np
import pytest

from locus import neural
from locus.neural import (
    CnnModel,
    MlpModel,
    RbfModel,
    TrainConfig,
    fit_rbf_output,
    gradient_check,
    kmeans,
    make_cnn,
    make_mlp,
    model_from_dict,
    model_to_dict,
    rbf_widths,
    train,
    _conv1d,
)


def _data(n=24, d=6, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, d)), rng.uniform(0, 1, (n, 2))


# ---------------------------------------------------------------------------
# construction


def test_make_mlp_shapes_and_xavier_bounds():
    m = make_mlp(3, hidden=(32, 32), seed=1)
    shapes = {k: v.shape for k, v in m.params().items()}
    assert shapes == {
        "w0": (32, 3),
        "b0": (32,),
        "w1": (32, 32),
        "b1": (32,),
        "w2": (2, 32),
        "b2": (2,),
    }
    limit0 = math.sqrt(6.0 / (3 + 32))
    w0 = m.params()["w0"]
    assert np.max(np.abs(w0)) <= limit0
    assert np.max(np.abs(w0)) > 0.5 * limit0  # actually fills the range
    assert np.all(m.params()["b0"] == 0.0)


def test_make_mlp_seed_determinism():
    a = make_mlp(4, seed=7)
    b = make_mlp(4, seed=7)
    c = make_mlp(4, seed=8)
    assert all(np.array_equal(a.params()[k], b.params()[k]) for k in a.params())
    assert any(not np.array_equal(a.params()[k], c.params()[k]) for k in a.params())


def test_make_mlp_rejects_empty_hidden():
    with pytest.raises(ValueError):
        make_mlp(3, hidden=())


def test_make_cnn_shapes():
    m = make_cnn(6, filters=(16, 16), kernel_width=2, dense_width=32, seed=0)
    p = m.params()
    assert p["cw0"].shape == (2, 1, 16)
    assert p["cw1"].shape == (2, 16, 16)
    # two convs of width 2 shrink length 6 to 4; flatten 4*16 = 64
    assert p["w0"].shape == (32, 64)
    assert p["w1"].shape == (2, 32)


def test_cnn_needs_min_input_length():
    with pytest.raises(ValueError):
        make_cnn(2)  # two width-2 convs need length >= 3


# ---------------------------------------------------------------------------
# forward passes against independent oracles


def test_mlp_forward_hand_computed():
    """1-hidden-unit network evaluated by hand."""
    m = make_mlp(2, hidden=(1,), seed=0)
    m.weights[0][:] = np.array([[0.5, -1.0]])
    m.biases[0][:] = np.array([0.25])
    m.weights[1][:] = np.array([[2.0], [-3.0]])
    m.biases[1][:] = np.array([0.1, -0.2])
    x = np.array([[1.0, 0.5]])
    h = math.tanh(0.5 * 1.0 - 1.0 * 0.5 + 0.25)
    expect = np.array([2.0 * h + 0.1, -3.0 * h - 0.2])
    out = m.forward_batch(x)
    assert np.allclose(out[0], expect, atol=1e-12)


def test_conv1d_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 7, 3))
    w = rng.standard_normal((2, 3, 5))
    b = rng.standard_normal(5)
    got = _conv1d(x, w, b)
    ref = np.zeros((4, 6, 5))
    for n in range(4):
        for t in range(6):
            for o in range(5):
                acc = b[o]
                for dt in range(2):
                    for c in range(3):
                        acc += x[n, t + dt, c] * w[dt, c, o]
                ref[n, t, o] = acc
    assert np.allclose(got, ref, atol=1e-12)


def test_rbf_kernel_values():
    """Gaussian activations computed by hand for fixed centers."""
    model = RbfModel(
        centers=np.array([[0.0, 0.0], [1.0, 0.0]]),
        widths=np.array([1.0, 0.5]),
        w_out=np.array([[1.0, 0.0], [0.0, 1.0]]),
        b_out=np.zeros(2),
    )
    x = np.array([[0.0, 0.0]])
    phi0 = 1.0  # at its own center
    phi1 = math.exp(-1.0 / (2 * 0.25))
    out = model.forward_batch(x)
    assert out[0, 0] == pytest.approx(phi0, abs=1e-12)
    assert out[0, 1] == pytest.approx(phi1, abs=1e-12)


# ---------------------------------------------------------------------------
# k-means and widths


def test_kmeans_two_obvious_clusters():
    data = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]])
    centers = kmeans(data, 2, seed=0)
    centers = centers[np.argsort(centers[:, 0])]
    assert np.allclose(centers[0], [1.0 / 30, 1.0 / 30], atol=1e-9)
    assert np.allclose(centers[1], [5.0 + 1.0 / 30, 5.0 + 1.0 / 30], atol=1e-9)


def test_kmeans_duplicate_rows_deduped():
    data = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0], [2.0, 2.0]])
    centers = kmeans(data, 4, seed=0)
    assert centers.shape == (2, 2)  # only two distinct rows exist
    with pytest.raises(ValueError):
        kmeans(data, 6, seed=0)  # k above the row count


def test_kmeans_deterministic():
    rng = np.random.default_rng(0)
    data = rng.uniform(0, 1, (50, 3))
    assert np.array_equal(kmeans(data, 7, seed=3), kmeans(data, 7, seed=3))


def test_rbf_widths_two_nearest_oracle():
    centers = np.array([[0.0], [1.0], [3.0]])
    w = rbf_widths(centers)
    # center 0: nearest others at 1 and 3 -> mean 2
    assert w[0] == pytest.approx(2.0)
    # center 1: distances 1 and 2 -> 1.5
    assert w[1] == pytest.approx(1.5)
    # center 2: distances 2 and 3 -> 2.5
    assert w[2] == pytest.approx(2.5)


def test_rbf_widths_single_center_fallback():
    centers = np.array([[1.0, 1.0]])
    data = np.array([[0.0, 0.0], [2.0, 2.0]])
    w = rbf_widths(centers, data)
    assert w[0] == pytest.approx(math.sqrt(2.0))


# ---------------------------------------------------------------------------
# ridge output fit


def test_fit_rbf_output_matches_lstsq_oracle():
    x, y = _data(40, 4, seed=5)
    model = RbfModel.init(x, k=10, seed=1)
    fit_rbf_output(model, x, y, ridge=1e-6)
    # independent route: kernels by hand, ridge as augmented least squares
    d2 = np.sum((x[:, None, :] - model.centers[None, :, :]) ** 2, axis=2)
    phi = np.exp(-d2 / (2.0 * model.widths**2))
    g = np.column_stack([phi, np.ones(len(x))])
    aug_a = np.vstack([g, math.sqrt(1e-6) * np.eye(11)])
    aug_b = np.vstack([y, np.zeros((11, 2))])
    coef = np.linalg.lstsq(aug_a, aug_b, rcond=None)[0]
    assert np.allclose(model.w_out, coef[:10].T, atol=1e-8)
    assert np.allclose(model.b_out, coef[10], atol=1e-8)


def test_fit_rbf_output_reduces_loss():
    x, y = _data(60, 6, seed=9)
    model = RbfModel.init(x, k=12, seed=2)
    before = neural.loss_and_gradients(model, x, y)[0]
    after = fit_rbf_output(model, x, y)
    assert after < before


# ---------------------------------------------------------------------------
# gradients


def test_gradient_checks_all_families():
    x, y = _data(8, 6, seed=3)
    assert gradient_check(make_mlp(6, seed=0), x, y) < 1e-4
    assert gradient_check(make_cnn(6, seed=1), x, y) < 1e-4
    assert gradient_check(RbfModel.init(x, k=5, seed=2), x, y) < 1e-4


def test_gradient_check_random_configs():
    rng = np.random.default_rng(12)
    for i in range(3):
        d = int(rng.integers(3, 8))
        n = int(rng.integers(4, 12))
        x = rng.uniform(0, 1, (n, d))
        y = rng.uniform(0, 1, (n, 2))
        assert gradient_check(make_mlp(d, hidden=(5, 4), seed=i), x, y) < 1e-4
        assert gradient_check(make_cnn(d, filters=(3, 3), seed=i), x, y) < 1e-4
        assert gradient_check(RbfModel.init(x, k=min(4, n), seed=i), x, y) < 1e-4


def test_loss_is_mse_over_all_entries():
    m = make_mlp(3, seed=0)
    x, y = _data(10, 3, seed=4)
    pred = m.forward_batch(x)
    loss = neural.loss_and_gradients(m, x, y)[0]
    assert loss == pytest.approx(np.mean((pred - y) ** 2), abs=1e-12)


# ---------------------------------------------------------------------------
# training loop


def test_train_loss_history_and_decrease():
    x, y = _data(48, 4, seed=6)
    m = make_mlp(4, seed=0)
    res = train(m, x, y, TrainConfig(learning_rate=0.05, batch_size=16, iterations=200, seed=1))
    assert len(res.loss_history) == 200
    assert res.final_loss == res.loss_history[-1]
    assert res.loss_history[-1] < res.loss_history[0]


def test_train_zero_learning_rate_keeps_params():
    x, y = _data(20, 3, seed=7)
    m = make_mlp(3, seed=2)
    before = {k: v.copy() for k, v in m.params().items()}
    train(m, x, y, TrainConfig(learning_rate=0.0, batch_size=8, iterations=50, seed=0))
    for k, v in m.params().items():
        assert np.array_equal(v, before[k])


def test_train_deterministic():
    x, y = _data(30, 5, seed=8)
    cfg = TrainConfig(learning_rate=0.02, batch_size=8, iterations=100, seed=5)
    m1 = make_mlp(5, seed=3)
    m2 = make_mlp(5, seed=3)
    r1 = train(m1, x, y, cfg)
    r2 = train(m2, x, y, cfg)
    assert np.array_equal(r1.loss_history, r2.loss_history)
    assert all(np.array_equal(m1.params()[k], m2.params()[k]) for k in m1.params())


def test_train_records_pre_update_loss():
    """First history entry is the first batch's loss before any step."""
    x, y = _data(16, 3, seed=9)
    m = make_mlp(3, seed=4)
    # full-batch: the first batch is the whole (shuffled) set
    init_loss = neural.loss_and_gradients(m, x, y)[0]
    res = train(m, x, y, TrainConfig(learning_rate=0.1, batch_size=16, iterations=3, seed=0))
    assert res.loss_history[0] == pytest.approx(init_loss, abs=1e-12)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-0.1, batch_size=8, iterations=10)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, batch_size=0, iterations=10)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, batch_size=8, iterations=0)


def test_batch_size_larger_than_data_is_full_batch():
    x, y = _data(10, 3, seed=10)
    m = make_mlp(3, seed=5)
    res = train(m, x, y, TrainConfig(learning_rate=0.05, batch_size=64, iterations=20, seed=1))
    assert len(res.loss_history) == 20


# ---------------------------------------------------------------------------
# serialization


@pytest.mark.parametrize("family", ["mlp", "rbf", "cnn"])
def test_model_dict_roundtrip(family):
    x, y = _data(20, 6, seed=11)
    if family == "mlp":
        m = make_mlp(6, seed=0)
    elif family == "cnn":
        m = make_cnn(6, seed=0)
    else:
        m = RbfModel.init(x, k=7, seed=0)
    d = model_to_dict(m, norm={"feature_min": [0.0] * 6})
    assert d["format"] == "locus-model"
    assert d["family"] == family
    m2, norm = model_from_dict(d)
    assert norm == {"feature_min": [0.0] * 6}
    assert np.allclose(m.forward_batch(x), m2.forward_batch(x), atol=1e-15)
    for k in m.params():
        assert np.array_equal(m.params()[k], m2.params()[k])


def test_model_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        model_from_dict({"format": "other"})
