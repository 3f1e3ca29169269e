"""Forward oracles and gradient checks for the neural building blocks."""

import numpy as np
import pytest

import graphalp.autodiff as ad
from graphalp.autodiff import Tensor
from graphalp.graph import normalized_adjacency
from graphalp.nn import (
    AdamState,
    GraphSageParams,
    MlpParams,
    adam_step,
    binary_cross_entropy,
    cosine_matrix,
    cosine_similarity,
    frobenius_loss,
    glorot_uniform,
    graphsage_forward,
    load_params,
    mlp_forward,
    save_params,
    sigmoid_inner_product,
    softmax,
    weighted_cross_entropy,
    zero_grads,
)

from helpers import away_from_zero, grad_check, random_edges, rel_err, numeric_grad

TOL = 1e-4


def test_glorot_bounds(rng):
    w = glorot_uniform(rng, 100, 50)
    limit = np.sqrt(6.0 / 150.0)
    assert w.shape == (100, 50)
    assert np.abs(w).max() <= limit


def test_mlp_zero_weights_zero_output(rng):
    params = MlpParams.create([4, 3, 2], rng)
    for w in params.weights:
        w.values[:] = 0.0
    for b in params.biases:
        b.values[:] = 0.0
    out = mlp_forward(params, Tensor(rng.standard_normal((5, 4))))
    assert np.allclose(out.values, 0.0)


def test_mlp_identity_relu_hand_case(rng):
    params = MlpParams.create([2, 2], rng, output_activation="relu")
    params.weights[0].values[:] = np.eye(2)
    params.biases[0].values[:] = 0.0
    out = mlp_forward(params, Tensor([[-1.0, 2.0]]))
    assert np.allclose(out.values, [[0.0, 2.0]])


def test_mlp_rejects_width_mismatch(rng):
    params = MlpParams.create([4, 3], rng)
    with pytest.raises(ValueError):
        mlp_forward(params, Tensor(np.zeros((2, 5))))


def test_mlp_gradients(rng):
    params = MlpParams.create([3, 5, 2], rng)
    x = Tensor(away_from_zero(rng, (4, 3)), requires_grad=True)
    leaves = [x] + list(params.parameters().values())
    err = grad_check(
        lambda: ad.sum_all(ad.mul(mlp_forward(params, x), mlp_forward(params, x))),
        leaves)
    assert err < TOL


def test_graphsage_zero_features(rng):
    layer = GraphSageParams.create(3, 2, rng)
    adj = normalized_adjacency(4, [(0, 1), (2, 3)])
    out = graphsage_forward(layer, Tensor(np.zeros((4, 3))), adj)
    assert np.allclose(out.values, 0.0)


def test_graphsage_isolated_node_uses_self_features_only(rng):
    layer = GraphSageParams.create(2, 2, rng, activation="relu")
    layer.weight.values[:] = np.array([[1.0, 0.0, 0.0, 0.0],
                                       [0.0, 1.0, 0.0, 0.0]])
    x = rng.standard_normal((3, 2))
    adj = normalized_adjacency(3, [(0, 1)])
    out = graphsage_forward(layer, Tensor(x), adj)
    assert np.allclose(out.values[2], np.maximum(x[2], 0.0))


def test_graphsage_matches_per_node_loop(rng):
    n, d_in, d_out = 6, 3, 4
    layer = GraphSageParams.create(d_in, d_out, rng, activation="relu")
    edges = random_edges(rng, n, 0.4)
    x = rng.standard_normal((n, d_in))
    adj = normalized_adjacency(n, edges)
    out = graphsage_forward(layer, Tensor(x), adj).values

    w = layer.weight.values
    expected = np.zeros((n, d_out))
    for v in range(n):
        nbrs = [j for i, j in edges if i == v] + [i for i, j in edges if j == v]
        agg = x[nbrs].mean(axis=0) if nbrs else np.zeros(d_in)
        expected[v] = np.maximum(np.concatenate([x[v], agg]) @ w.T, 0.0)
    assert np.abs(out - expected).max() < 1e-9


def test_graphsage_gradients(rng):
    layer = GraphSageParams.create(3, 2, rng)
    adj = normalized_adjacency(5, random_edges(rng, 5, 0.5))
    x = Tensor(away_from_zero(rng, (5, 3)), requires_grad=True)
    leaves = [x, layer.weight]
    err = grad_check(
        lambda: ad.sum_all(ad.mul(graphsage_forward(layer, x, adj),
                                  graphsage_forward(layer, x, adj))),
        leaves)
    assert err < TOL


def test_sigmoid_inner_product_properties(rng):
    assert np.allclose(sigmoid_inner_product(Tensor(np.zeros((3, 2)))).values, 0.5)
    h = rng.standard_normal((4, 3))
    out = sigmoid_inner_product(Tensor(h)).values
    assert np.allclose(out, out.T)
    h2 = np.array([[3.0], [3.0]])
    out2 = sigmoid_inner_product(Tensor(h2)).values
    assert abs(out2[0, 1] - 1.0 / (1.0 + np.exp(-9.0))) < 1e-12


def test_frobenius_loss_values(rng):
    x = rng.standard_normal((3, 3))
    assert frobenius_loss(Tensor(x), Tensor(x)).item() == 0.0
    xhat = Tensor(np.ones((2, 2)), requires_grad=True)
    target = Tensor(np.zeros((2, 2)))
    loss = frobenius_loss(xhat, target)
    assert loss.item() == 4.0
    loss.backward()
    assert np.allclose(xhat.grad, 2.0 * np.ones((2, 2)))
    with pytest.raises(ValueError):
        frobenius_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2))))


def test_frobenius_loss_fd(rng):
    xhat = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    target = Tensor(rng.standard_normal((3, 4)))
    assert grad_check(lambda: frobenius_loss(xhat, target), [xhat]) < TOL


def test_softmax_rows_sum_to_one(rng):
    probs = softmax(rng.standard_normal((6, 4)) * 10)
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9
    assert softmax(np.array([[3.0]]))[0, 0] == 1.0


def test_weighted_ce_hand_case():
    # two classes, true class 1 at probability 0.5, weight 2
    logits = Tensor(np.array([[0.0, 0.0]]))
    loss = weighted_cross_entropy(logits, [1], [1.0, 2.0])
    assert abs(loss.item() - 2.0 * np.log(2.0)) < 1e-12


def test_weighted_ce_uniform_matches_unweighted_oracle(rng):
    logits_values = rng.standard_normal((8, 4))
    y = rng.integers(0, 4, size=8)
    loss = weighted_cross_entropy(Tensor(logits_values), y, np.ones(4)).item()
    probs = softmax(logits_values)
    oracle = -np.log(probs[np.arange(8), y]).sum()
    assert abs(loss - oracle) < 1e-9


def test_weighted_ce_perfect_prediction_loss_vanishes():
    logits = Tensor(np.array([[30.0, 0.0], [0.0, 30.0]]))
    loss = weighted_cross_entropy(logits, [0, 1], [1.0, 1.0])
    assert loss.item() < 1e-9


def test_weighted_ce_validation():
    with pytest.raises(ValueError):
        weighted_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3], np.ones(3))
    with pytest.raises(ValueError):
        weighted_cross_entropy(Tensor(np.zeros((2, 3))), [0, 1], np.ones(2))
    with pytest.raises(ValueError):
        weighted_cross_entropy(Tensor(np.zeros((2, 3))), [0], np.ones(3))


def test_weighted_ce_fd(rng):
    logits = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    y = rng.integers(0, 3, size=6)
    w = rng.uniform(0.5, 3.0, size=3)
    assert grad_check(lambda: weighted_cross_entropy(logits, y, w), [logits]) < TOL


def test_bce_values(rng):
    scores = Tensor(np.array([[0.5], [0.5]]))
    loss = binary_cross_entropy(scores, np.array([[1.0], [0.0]]))
    assert abs(loss.item() - 2.0 * np.log(2.0)) < 1e-12
    near_one = Tensor(np.array([[1.0 - 1e-9]]))
    assert binary_cross_entropy(near_one, np.array([[1.0]])).item() < 1e-6


def test_bce_matches_per_pair_oracle(rng):
    values = rng.uniform(0.05, 0.95, size=(7, 1))
    targets = rng.integers(0, 2, size=(7, 1)).astype(float)
    loss = binary_cross_entropy(Tensor(values), targets).item()
    oracle = sum(-(t * np.log(v) + (1 - t) * np.log(1 - v))
                 for v, t in zip(values.ravel(), targets.ravel()))
    assert abs(loss - oracle) < 1e-9


def test_bce_fd(rng):
    scores = Tensor(rng.uniform(0.1, 0.9, size=(5, 1)), requires_grad=True)
    targets = rng.integers(0, 2, size=(5, 1)).astype(float)
    assert grad_check(lambda: binary_cross_entropy(scores, targets), [scores]) < TOL


def test_cosine_similarity_cases():
    assert cosine_similarity([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)
    assert cosine_similarity([1.0, 2.0], [2.0, 1.0]) == pytest.approx(0.8)
    assert cosine_similarity([0.0, 0.0], [1.0, 1.0]) == 0.0


def test_cosine_matrix_matches_pairwise(rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((5, 3))
    m = cosine_matrix(a, b)
    for i in range(4):
        for j in range(5):
            assert m[i, j] == pytest.approx(cosine_similarity(a[i], b[j]), abs=1e-12)


def test_adam_zero_grad_no_decay_no_move(rng):
    p = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    before = p.values.copy()
    adam_step(AdamState(weight_decay=0.0), {"p": p})
    assert np.array_equal(p.values, before)


def test_adam_first_step_magnitude(rng):
    p = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    before = p.values.copy()
    p._accumulate(rng.uniform(0.5, 2.0, size=(3, 3)))
    adam_step(AdamState(lr=0.01, weight_decay=0.0), {"p": p})
    # bias-corrected first step moves every coordinate by ~lr in -sign(g)
    assert np.abs(np.abs(before - p.values) - 0.01).max() < 1e-6


def test_adam_decoupled_decay_shrinks_weights(rng):
    p = Tensor(np.full((2, 2), 10.0), requires_grad=True)
    adam_step(AdamState(lr=0.1, weight_decay=0.5), {"p": p})
    assert np.allclose(p.values, 10.0 * (1.0 - 0.1 * 0.5))


def test_adam_deterministic_replay(rng):
    def run():
        r = np.random.default_rng(7)
        p = Tensor(r.standard_normal((4, 4)), requires_grad=True)
        state = AdamState(lr=0.05, weight_decay=1e-2)
        for _ in range(10):
            p.zero_grad()
            ad.sum_all(ad.mul(p, p)).backward()
            adam_step(state, {"p": p})
        return p.values.copy()

    assert np.array_equal(run(), run())


def test_zero_grads_clears_all(rng):
    params = {"a": Tensor(rng.standard_normal((2, 2)), requires_grad=True)}
    ad.sum_all(params["a"]).backward()
    zero_grads(params)
    assert np.allclose(params["a"].grad, 0.0)


def test_save_load_roundtrip(tmp_path, rng):
    params = {"w": Tensor(rng.standard_normal((3, 2)), requires_grad=True),
              "b": Tensor(rng.standard_normal((1, 2)), requires_grad=True)}
    path = tmp_path / "ckpt.json"
    save_params(path, params)
    restored = {"w": Tensor(np.zeros((3, 2)), requires_grad=True),
                "b": Tensor(np.zeros((1, 2)), requires_grad=True)}
    load_params(path, restored)
    assert np.array_equal(restored["w"].values, params["w"].values)
    assert np.array_equal(restored["b"].values, params["b"].values)


def test_numeric_grad_helper_sanity(rng):
    # the FD helper itself: gradient of sum(x^2) is 2x
    x = rng.standard_normal((3, 3))
    g = numeric_grad(lambda: float((x ** 2).sum()), x)
    assert rel_err(g, 2 * x) < 1e-6
