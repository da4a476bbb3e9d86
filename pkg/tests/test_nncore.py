import numpy as np
import pytest

from conftest import assert_grad_close, finite_difference
from mdalbench.errors import NonFiniteError, ShapeError, UsageError, ValidationError
from mdalbench.nncore import (
    Linear,
    Param,
    RngStream,
    gaussian_sample,
    grad_reversal,
    grad_reversal_backward,
    kl_divergence,
    relu,
    relu_backward,
    sgd_step,
    softmax_cross_entropy,
)


# ----------------------------------------------------------------- rng stream


def test_rng_stream_replays_and_separates():
    a = RngStream(7, "init").generator().normal(size=5)
    b = RngStream(7, "init").generator().normal(size=5)
    c = RngStream(7, "shuffle").generator().normal(size=5)
    d = RngStream(8, "init").generator().normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_rng_children_are_independent():
    root = RngStream(3)
    u = root.child("a").generator().normal(size=4)
    v = root.child("b").generator().normal(size=4)
    assert not np.array_equal(u, v)
    assert np.array_equal(u, RngStream(3, "root/a").generator().normal(size=4))


# --------------------------------------------------------------------- linear


def test_linear_identity_weights():
    lin = Linear(np.eye(2), np.zeros(2))
    Y, _ = lin.forward([[3.0, 4.0]])
    assert np.array_equal(Y, [[3.0, 4.0]])


def test_linear_hand_product():
    lin = Linear(np.array([[1.0, 1.0]]), np.array([1.0]))
    Y, _ = lin.forward([[2.0, 3.0]])
    assert np.array_equal(Y, [[6.0]])


def test_linear_zero_weights_pass_bias():
    lin = Linear(np.zeros((1, 4)), np.array([5.0]))
    Y, _ = lin.forward([[1.0, -2.0, 3.5, 0.0]])
    assert np.array_equal(Y, [[5.0]])


def test_linear_shape_error_names_both_shapes():
    lin = Linear(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeError) as err:
        lin.forward(np.zeros((1, 4)))
    assert "(1, 4)" in str(err.value) and "(2, 3)" in str(err.value)


def test_linear_backward_zero_upstream():
    lin = Linear(np.array([[2.0]]), np.zeros(1))
    _, cache = lin.forward([[3.0]])
    dX = lin.backward(cache, np.zeros((1, 1)))
    assert np.array_equal(dX, [[0.0]])
    assert np.array_equal(lin.W.grad, [[0.0]])
    assert np.array_equal(lin.b.grad, [0.0])


def test_linear_backward_scalar_chain_rule():
    lin = Linear(np.array([[2.0]]), np.zeros(1))
    _, cache = lin.forward([[3.0]])
    dX = lin.backward(cache, np.array([[1.0]]))
    assert np.array_equal(lin.W.grad, [[3.0]])
    assert np.array_equal(dX, [[2.0]])


def test_linear_backward_requires_cache():
    lin = Linear(np.eye(2), np.zeros(2))
    with pytest.raises(UsageError):
        lin.backward(None, np.zeros((1, 2)))


def test_linear_backward_matches_finite_differences(rng):
    for _ in range(5):
        n, d_in, d_out = rng.integers(1, 5, size=3)
        lin = Linear(rng.normal(size=(d_out, d_in)), rng.normal(size=d_out))
        X = rng.normal(size=(n, d_in))
        R = rng.normal(size=(n, d_out))  # fixed probe direction

        def loss():
            Y, _ = lin.forward(X)
            return float((Y * R).sum())

        _, cache = lin.forward(X)
        dX = lin.backward(cache, R)
        assert_grad_close(lin.W.grad, finite_difference(loss, lin.W.value))
        assert_grad_close(lin.b.grad, finite_difference(loss, lin.b.value))
        assert_grad_close(dX, finite_difference(loss, X))
        lin.W.zero_grad()
        lin.b.zero_grad()


# ----------------------------------------------------------------------- relu


def test_relu_forward_backward_hand_values():
    X = np.array([[-1.0, 2.0]])
    assert np.array_equal(relu(X), [[0.0, 2.0]])
    assert np.array_equal(relu_backward(X, np.array([[5.0, 5.0]])), [[0.0, 5.0]])


def test_relu_subgradient_zero_at_zero():
    assert relu_backward(np.array([[0.0]]), np.array([[7.0]]))[0, 0] == 0.0


def test_relu_finite_difference_away_from_zero(rng):
    X = rng.normal(size=(3, 4))
    X[np.abs(X) < 0.1] = 0.5  # keep away from the kink
    R = rng.normal(size=(3, 4))

    def loss():
        return float((relu(X) * R).sum())

    assert_grad_close(relu_backward(X, R), finite_difference(loss, X))


# -------------------------------------------------------- softmax cross entropy


def test_softmax_ce_symmetric_logits():
    loss, _, probs = softmax_cross_entropy(np.zeros((1, 2)), [0])
    assert probs[0] == pytest.approx([0.5, 0.5])
    assert loss == pytest.approx(np.log(2.0))


def test_softmax_ce_hand_value():
    loss, _, probs = softmax_cross_entropy(np.array([[np.log(3.0), 0.0]]), [0])
    assert probs[0, 0] == pytest.approx(0.75)
    assert loss == pytest.approx(-np.log(0.75))


def test_softmax_ce_label_out_of_range():
    with pytest.raises(ValidationError):
        softmax_cross_entropy(np.zeros((1, 3)), [3])


def test_softmax_rows_sum_to_one(rng):
    logits = rng.normal(scale=5.0, size=(50, 7))
    _, _, probs = softmax_cross_entropy(logits, rng.integers(0, 7, size=50))
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9
    assert (probs > 0).all() and (probs < 1).all()


def test_softmax_ce_gradient_matches_finite_differences(rng):
    for _ in range(5):
        n, c = int(rng.integers(1, 6)), int(rng.integers(2, 6))
        logits = rng.normal(size=(n, c))
        labels = rng.integers(0, c, size=n)

        def loss():
            return softmax_cross_entropy(logits, labels)[0]

        _, dlogits, _ = softmax_cross_entropy(logits, labels)
        assert_grad_close(dlogits, finite_difference(loss, logits))


# ------------------------------------------------------------- grad reversal


def test_grad_reversal_sign_flip():
    _, cache = grad_reversal(np.array([[1.0, 2.0]]), 1.0)
    g = np.array([[0.3, -0.7]])
    assert np.array_equal(grad_reversal_backward(cache, g), -g)


def test_grad_reversal_zero_lambda_blocks():
    _, cache = grad_reversal(np.array([[1.0]]), 0.0)
    assert np.array_equal(grad_reversal_backward(cache, np.array([[9.0]])), [[0.0]])


def test_grad_reversal_scaling():
    _, cache = grad_reversal(np.array([[0.0, 0.0]]), 0.5)
    out = grad_reversal_backward(cache, np.array([[2.0, -4.0]]))
    assert np.array_equal(out, [[-1.0, 2.0]])


def test_grad_reversal_rejects_negative_lambda():
    with pytest.raises(ValidationError):
        grad_reversal(np.zeros((1, 1)), -0.1)


def test_grad_reversal_in_two_layer_net_matches_flipped_fd(rng):
    # lin2(grl(lin1(X))) -> CE; params below the reversal get -lam times
    # the finite-difference gradient of the plain loss
    lam = 0.7
    lin1 = Linear(rng.normal(size=(3, 2)), rng.normal(size=3))
    lin2 = Linear(rng.normal(size=(2, 3)), rng.normal(size=2))
    X = rng.normal(size=(4, 2))
    y = rng.integers(0, 2, size=4)

    def loss():
        h, _ = lin1.forward(X)
        out, _ = lin2.forward(h)
        return softmax_cross_entropy(out, y)[0]

    h, c1 = lin1.forward(X)
    rev, rc = grad_reversal(h, lam)
    out, c2 = lin2.forward(rev)
    _, dlogits, _ = softmax_cross_entropy(out, y)
    drev = lin2.backward(c2, dlogits)
    lin1.backward(c1, grad_reversal_backward(rc, drev))

    assert_grad_close(lin2.W.grad, finite_difference(loss, lin2.W.value))
    assert_grad_close(lin1.W.grad, -lam * finite_difference(loss, lin1.W.value))
    assert_grad_close(lin1.b.grad, -lam * finite_difference(loss, lin1.b.value))


# -------------------------------------------------------------------- sgd step


def test_sgd_zero_grad_no_change():
    p = Param(np.array([1.0, -2.0]))
    sgd_step([p], 0.1)
    assert np.array_equal(p.value, [1.0, -2.0])


def test_sgd_arithmetic():
    p = Param(np.array([1.0]))
    p.grad[:] = 2.0
    sgd_step([p], 0.1)
    assert p.value[0] == pytest.approx(0.8)
    assert p.grad[0] == 0.0


def test_sgd_two_steps_compose():
    p = Param(np.array([0.0]))
    for _ in range(2):
        p.grad[:] = 3.0
        sgd_step([p], 0.5)
    q = Param(np.array([0.0]))
    q.grad[:] = 6.0
    sgd_step([q], 0.5)
    assert p.value == pytest.approx(q.value)


def test_sgd_rejects_non_finite_grad():
    p = Param(np.array([1.0]))
    p.grad[:] = np.nan
    with pytest.raises(NonFiniteError):
        sgd_step([p], 0.1)


# --------------------------------------------------------------- kl divergence


def test_kl_identical_is_exactly_zero():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_kl_hand_values():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2.0), abs=1e-9)
    expected = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
    assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, abs=1e-12)


def test_kl_validation():
    with pytest.raises(ValidationError):
        kl_divergence([0.5, 0.5], [1.0])
    with pytest.raises(ValidationError):
        kl_divergence([0.9, 0.3], [0.5, 0.5])


def test_kl_nonnegative_and_self_zero_on_random_pairs(rng):
    for _ in range(1000):
        c = int(rng.integers(2, 8))
        p = rng.random(c) + 1e-9
        q = rng.random(c) + 1e-9
        p /= p.sum()
        q /= q.sum()
        assert kl_divergence(p, q) >= 0.0
        assert kl_divergence(p, p) == 0.0


# ------------------------------------------------------------- gaussian sample


def test_gaussian_sample_deterministic_per_stream():
    s = RngStream(11, "perturbation")
    assert np.array_equal(gaussian_sample(0.3, 6, s), gaussian_sample(0.3, 6, s))


def test_gaussian_sample_rejects_bad_sigma():
    with pytest.raises(ValidationError):
        gaussian_sample(0.0, 3, RngStream(0))
    with pytest.raises(ValidationError):
        gaussian_sample(-1.0, 3, RngStream(0))


def test_gaussian_sample_moments():
    n = 100_000
    sigma = 0.7
    draws = gaussian_sample(sigma, n, RngStream(5, "moments"))
    assert abs(draws.mean()) < 3.0 * sigma / np.sqrt(n)
    assert abs(draws.var() - sigma**2) < 0.05 * sigma**2
