import numpy as np
import pytest

from fairrank.adversary import (
    AdversaryParams,
    adv_backward,
    adv_forward,
    adv_loss,
    forward_scores,
    init_adversary,
    loglik_and_grads,
)
from fairrank.errors import ConfigError


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def test_init_shapes_and_glorot_bounds():
    psi = init_adversary(3, hidden_layers=2, hidden_width=7, seed=0)
    shapes = [w.shape for w in psi.weights]
    assert shapes == [(1, 7), (7, 7), (7, 3)]
    assert all(np.all(b == 0) for b in psi.biases)
    for w in psi.weights:
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.abs(w).max() <= limit
    assert psi.num_groups == 3
    assert psi.num_hidden_layers == 2


def test_init_zero_hidden_layers():
    psi = init_adversary(2, hidden_layers=0, seed=0)
    assert [w.shape for w in psi.weights] == [(1, 2)]
    probs = adv_forward(psi, 1.5)
    z = 1.5 * psi.weights[0][0] + psi.biases[0]
    assert np.allclose(probs, _sigmoid(z))


def test_init_errors():
    with pytest.raises(ConfigError):
        init_adversary(0)
    with pytest.raises(ConfigError):
        init_adversary(2, hidden_layers=-1)
    with pytest.raises(ConfigError):
        init_adversary(2, hidden_layers=1, hidden_width=0)


def test_forward_hand_computed():
    # one hidden layer of width 2, one output: full arithmetic by hand
    psi = AdversaryParams(
        weights=[np.array([[1.0, -2.0]]), np.array([[0.5], [1.0]])],
        biases=[np.array([0.1, 0.2]), np.array([-0.3])],
    )
    x = 0.7
    h1 = max(0.0, 1.0 * x + 0.1)  # 0.8
    h2 = max(0.0, -2.0 * x + 0.2)  # relu(-1.2) = 0
    z = 0.5 * h1 + 1.0 * h2 - 0.3  # 0.1
    assert np.isclose(adv_forward(psi, x)[0], _sigmoid(0.1))
    assert np.isclose(h1, 0.8) and h2 == 0.0 and np.isclose(z, 0.1)


def test_zero_weights_give_half_probs():
    psi = init_adversary(4, hidden_layers=2, hidden_width=5, seed=0)
    for w in psi.weights:
        w[:] = 0.0
    probs = forward_scores(psi, np.array([-3.0, 0.0, 9.0]))
    assert np.allclose(probs, 0.5)


def test_adv_loss_hand_values():
    probs = np.array([[0.5, 0.5]])
    labels = np.array([[1.0, 0.0]])
    # log(0.5) + log(0.5)
    assert np.isclose(adv_loss(probs, labels), 2 * np.log(0.5))
    # clamp keeps exact zeros and ones finite
    hard = np.array([[0.0, 1.0]])
    assert np.isfinite(adv_loss(hard, labels))
    assert adv_loss(hard, labels) < -20


def _fd_check(psi, scores, labels, h=1e-6):
    ll, grads, d_score = loglik_and_grads(psi, scores, labels)
    total = ll.sum()
    blocks = psi.blocks()
    for name, arr in blocks.items():
        g = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loglik_and_grads(psi, scores, labels)[0].sum()
            arr[idx] = orig - h
            dn = loglik_and_grads(psi, scores, labels)[0].sum()
            arr[idx] = orig
            fd = (up - dn) / (2 * h)
            denom = max(abs(fd), abs(g[idx]), 1e-8)
            assert abs(fd - g[idx]) / denom < 1e-4, (name, idx, fd, g[idx])
    for n in range(len(scores)):
        bumped = scores.copy()
        bumped[n] += h
        up = loglik_and_grads(psi, bumped, labels)[0][n]
        bumped[n] -= 2 * h
        dn = loglik_and_grads(psi, bumped, labels)[0][n]
        fd = (up - dn) / (2 * h)
        denom = max(abs(fd), abs(d_score[n]), 1e-8)
        assert abs(fd - d_score[n]) / denom < 1e-4


@pytest.mark.parametrize("layers", [0, 1, 3])
def test_gradients_match_finite_differences(layers):
    rng = np.random.default_rng(layers)
    psi = init_adversary(2, hidden_layers=layers, hidden_width=4, seed=layers)
    # move off the zero-bias point so no ReLU sits exactly at its kink
    for b in psi.biases:
        b += rng.normal(scale=0.3, size=b.shape)
    scores = rng.normal(scale=2.0, size=6)
    labels = (rng.random((6, 2)) < 0.5).astype(float)
    _fd_check(psi, scores, labels)


def test_scalar_backward_matches_batch():
    rng = np.random.default_rng(3)
    psi = init_adversary(3, hidden_layers=2, hidden_width=5, seed=1)
    score = 0.8
    labels = np.array([1.0, 0.0, 1.0])
    grads, d_score = adv_backward(psi, score, labels)
    _, grads_b, d_score_b = loglik_and_grads(
        psi, np.array([score]), labels[None, :]
    )
    assert np.isclose(d_score, d_score_b[0])
    for name in grads:
        assert np.allclose(grads[name], grads_b[name])


def test_gradient_ascent_increases_loglik():
    rng = np.random.default_rng(0)
    psi = init_adversary(2, hidden_layers=2, hidden_width=8, seed=0)
    scores = np.concatenate([rng.normal(-1, 0.3, 30), rng.normal(1, 0.3, 30)])
    labels = np.zeros((60, 2))
    labels[:30, 0] = 1.0
    labels[30:, 1] = 1.0
    prev = loglik_and_grads(psi, scores, labels)[0].sum()
    for _ in range(50):
        _, grads, _ = loglik_and_grads(psi, scores, labels)
        for name, arr in psi.blocks().items():
            arr += 0.01 * grads[name]
        now = loglik_and_grads(psi, scores, labels)[0].sum()
        assert now >= prev - 1e-9
        prev = now
    # separable labels: the adversary should beat chance clearly
    assert prev / 60 > 2 * np.log(0.5) * 0.5


def test_relu_kink_uses_zero_subgradient():
    # zero first-layer weights put every hidden pre-activation exactly at
    # the kink; its subgradient is taken as 0, so nothing flows back
    psi = init_adversary(2, hidden_layers=1, hidden_width=4, seed=0)
    psi.weights[0][:] = 0.0
    psi.biases[0][:] = 0.0
    scores = np.array([1.3, -0.4])
    labels = np.array([[1.0, 0.0], [1.0, 0.0]])
    _, grads, d_score = loglik_and_grads(psi, scores, labels)
    assert np.all(grads["w0"] == 0.0)
    assert np.all(grads["b0"] == 0.0)
    assert np.all(d_score == 0.0)
    # the output layer still learns (its bias gradient is nonzero)
    assert np.any(grads[f"b{psi.num_hidden_layers}"] != 0.0)
