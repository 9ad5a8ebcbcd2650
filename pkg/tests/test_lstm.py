import math

import numpy as np
import pytest

from churnlab.lstm import (
    LstmHyper,
    LstmModel,
    gradient_check,
    init_model,
    loss_and_grad,
    lstm_forward,
    lstm_grid,
    n_params,
    predict_proba,
    train_lstm,
)


def sig(x):
    return 1 / (1 + math.exp(-x))


def toy(n=120, T=12, seed=0):
    """Churners' first channel falls over the last months; everyone else is flat."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 0.3, size=(n, T, 3))
    y = (np.arange(n) % 3 == 0).astype(float)
    ramp = np.linspace(0, -2.0, 6)
    X[y == 1, -6:, 0] += ramp
    return X, y


def test_zero_parameters_give_half():
    hyper = LstmHyper(hidden_units=4)
    model = LstmModel(np.zeros(n_params(4)), hyper, 3)
    X = np.random.default_rng(1).standard_normal((7, 36, 3))
    assert (predict_proba(model, X) == 0.5).all()


def test_hand_computed_cell():
    H = 1
    W = np.zeros((4, H, 3))
    W[3, 0, 0] = 1.0  # candidate reads the first input
    model = LstmModel.from_parts(W, np.zeros((4, H, H)), np.zeros((4, H)), np.ones(H), 0.0, LstmHyper(H))
    c = 0.5 * math.tanh(1.0)  # i = f = o = 1/2, g = tanh(1), c_0 = 0
    h = 0.5 * math.tanh(c)
    expected = sig(h)
    x = np.array([[[1.0, 0.0, 0.0]]])
    assert predict_proba(model, x)[0] == pytest.approx(expected, abs=1e-10)
    assert lstm_forward(model, x[0]) == pytest.approx(expected, abs=1e-10)


def test_two_step_recurrence():
    H = 1
    W = np.zeros((4, H, 3))
    W[3, 0, 0] = 1.0
    U = np.zeros((4, H, H))
    U[3, 0, 0] = 2.0
    model = LstmModel.from_parts(W, U, np.zeros((4, H)), np.ones(H), 0.0, LstmHyper(H))
    c1 = 0.5 * math.tanh(1.0)
    h1 = 0.5 * math.tanh(c1)
    c2 = 0.5 * c1 + 0.5 * math.tanh(2.0 * h1)
    h2 = 0.5 * math.tanh(c2)
    x = np.array([[[1.0, 0, 0], [0.0, 0, 0]]])
    assert predict_proba(model, x)[0] == pytest.approx(sig(h2), abs=1e-12)


def test_numba_matches_numpy_reference():
    model = init_model(LstmHyper(hidden_units=6, seed=3))
    X = np.random.default_rng(2).standard_normal((5, 36, 3))
    ref = [lstm_forward(model, x) for x in X]
    np.testing.assert_allclose(predict_proba(model, X), ref, rtol=1e-12)


def test_hidden_state_bounded():
    model = init_model(LstmHyper(hidden_units=5, seed=0))
    X = 50 * np.random.default_rng(0).standard_normal((1, 36, 3))
    _, hs = lstm_forward(model, X[0], return_states=True)
    assert hs.shape == (36, 5) and np.abs(hs).max() <= 1.0


def test_initialization():
    model = init_model(LstmHyper(hidden_units=25, seed=4))
    bound = 1 / math.sqrt(25)
    assert (model.b[1] == 1.0).all()
    assert np.abs(model.W).max() <= bound and np.abs(model.U).max() <= bound
    assert model.b_out == 0.0


def test_prediction_independent_of_batch_order():
    model = init_model(LstmHyper(hidden_units=5, seed=0))
    X = np.random.default_rng(5).standard_normal((9, 20, 3))
    perm = np.random.default_rng(6).permutation(9)
    np.testing.assert_array_equal(predict_proba(model, X)[perm], predict_proba(model, X[perm]))


def test_gradient_check():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((4, 8, 3))
    y = np.array([1.0, 0.0, 0.0, 1.0])
    for seed in range(5):
        model = init_model(LstmHyper(hidden_units=3, seed=seed))
        assert gradient_check(model, X, y) < 1e-4


def test_duplicated_batch_doubles_summed_gradient():
    model = init_model(LstmHyper(hidden_units=4, seed=1))
    X, y = toy(10, T=6)
    l1, g1 = loss_and_grad(model, X, y)
    l2, g2 = loss_and_grad(model, np.concatenate([X, X]), np.r_[y, y])
    assert l2 == pytest.approx(2 * l1, rel=1e-12)
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-10, atol=1e-12)
    lm, gm = loss_and_grad(model, X, y, reduction="mean")
    np.testing.assert_allclose(gm, g1 / 10, rtol=1e-12)


def test_learns_separable_toy():
    X, y = toy()
    model = train_lstm(X, y, LstmHyper(hidden_units=5, learning_rate=0.01, epochs=50, batch_size=10, seed=0))
    acc = ((predict_proba(model, X) > 0.5) == (y == 1)).mean()
    assert acc >= 0.95
    assert model.loss_history[-1] <= model.loss_history[0]


def test_training_deterministic():
    X, y = toy(60)
    hyper = LstmHyper(hidden_units=5, epochs=3, batch_size=7, seed=12)
    assert train_lstm(X, y, hyper) == train_lstm(X, y, hyper)
    other = train_lstm(X, y, LstmHyper(hidden_units=5, epochs=3, batch_size=7, seed=13))
    assert not np.array_equal(other.theta, train_lstm(X, y, hyper).theta)


def test_json_round_trip(tmp_path):
    X, y = toy(30)
    model = train_lstm(X, y, LstmHyper(hidden_units=3, epochs=2, seed=1))
    model.save(tmp_path / "m.json")
    back = LstmModel.load(tmp_path / "m.json")
    assert back == model
    np.testing.assert_array_equal(predict_proba(back, X), predict_proba(model, X))


@pytest.mark.parametrize("y", [np.zeros(10), np.ones(10)])
def test_single_class_rejected(y):
    with pytest.raises(ValueError, match="single class"):
        train_lstm(np.zeros((10, 36, 3)), y, LstmHyper())


def test_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        train_lstm(np.zeros((0, 36, 3)), np.zeros(0), LstmHyper())


def test_bad_shapes_and_values():
    model = init_model(LstmHyper())
    with pytest.raises(ValueError, match="shape"):
        predict_proba(model, np.zeros((2, 36, 4)))
    X = np.zeros((2, 36, 3))
    X[0, 3, 1] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        predict_proba(model, X)
    with pytest.raises(ValueError):
        LstmHyper(hidden_units=0)


def test_grid_size():
    grid = lstm_grid()
    assert len(grid) == 80 and len({h.key() for h in grid}) == 80
