import copy
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afgrl.errors import DimensionError
from afgrl.graph import normalize_adjacency
from afgrl.model import EVAL, AdamState, encoder_forward
from afgrl.positives import positives_from_lists
from afgrl.training import (
    EpochRecord,
    TrainConfig,
    afgrl_loss,
    init_network,
    symmetrized_loss,
    train,
    train_epoch,
)

# first ten epochs and the last of a 50-epoch run on the shared SBM fixture
GOLDEN_CONFIG = dict(embedding_dim=16, epochs=50, k=4, clusters=6, kmeans_runs=3, kmeans_iters=20, seed=3)
GOLDEN_HEAD = [
    0.6271261815149386, 0.37979612995169176, 0.06371819839757471, -0.18815817747623362,
    -0.4543856422476015, -0.7076248195330536, -0.9312488219596081, -1.2237568144387987,
    -1.521585082971229, -1.7056116726912807,
]
GOLDEN_LAST = -6.734281314479556


def brute_loss(z, h, lists, normalize=False):
    total = 0.0
    for i, p in enumerate(lists):
        s = 0.0
        for j in p:
            s += z[i] @ h[j] / (np.linalg.norm(z[i]) * np.linalg.norm(h[j]))
        total += s / len(p) if normalize else s
    return -total / len(lists)


def random_lists(r, n):
    return [sorted(set(r.integers(0, n, r.integers(0, 4)).tolist()) | {i}) for i in range(n)]


# --- objective ----------------------------------------------------------------


def test_loss_single_identical_pair():
    z = np.array([[1.0, 2.0]])
    loss, _ = afgrl_loss(z, z.copy(), [[0]])
    assert loss == pytest.approx(-1.0, abs=1e-12)


def test_loss_orthogonal_is_zero():
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    h = np.array([[0.0, 1.0], [1.0, 0.0]])
    loss, _ = afgrl_loss(z, h, [[0], [1]])
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_loss_is_scale_free(rng):
    z, h = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    lists = random_lists(rng, 5)
    a, _ = afgrl_loss(z, h, lists)
    b, _ = afgrl_loss(z * 7.0, h * 0.01, lists)
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("normalize", [False, True])
@pytest.mark.parametrize("seed", range(4))
def test_loss_matches_brute_force(seed, normalize):
    r = np.random.default_rng(seed)
    n = 12
    z, h = r.standard_normal((n, 4)), r.standard_normal((n, 4))
    lists = random_lists(r, n)
    loss, _ = afgrl_loss(z, h, lists, normalize_positives=normalize)
    assert loss == pytest.approx(brute_loss(z, h, lists, normalize), abs=1e-12)


@pytest.mark.parametrize("objective", [afgrl_loss, symmetrized_loss])
@pytest.mark.parametrize("seed", range(3))
def test_loss_gradient_finite_differences(seed, objective):
    r = np.random.default_rng(seed)
    n = 8
    z, h = r.standard_normal((n, 3)), r.standard_normal((n, 3))
    lists = random_lists(r, n)
    _, grad = objective(z, h, lists)
    num = np.zeros_like(z)
    eps = 1e-6
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += eps
        zm[idx] -= eps
        num[idx] = (objective(zp, h, lists)[0] - objective(zm, h, lists)[0]) / (2 * eps)
    assert np.linalg.norm(grad - num) <= 1e-6 * max(1.0, np.linalg.norm(num))


def test_symmetrized_doubles_for_symmetric_positives(rng):
    n = 6
    z, h = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    lists = [[i, (i + 1) % n, (i - 1) % n] for i in range(n)]
    plain, _ = afgrl_loss(z, h, lists)
    sym, _ = symmetrized_loss(z, h, lists)
    assert sym == pytest.approx(2 * plain, abs=1e-12)


def test_symmetrized_identical_embeddings(rng):
    n = 7
    z = rng.standard_normal((n, 3))
    sizes = [3, 1, 2, 1, 1, 2, 1]
    lists = [[i] + [(i + t) % n for t in range(1, s)] for i, s in enumerate(sizes)]
    # every pair compares a row with an identical direction only when i == j;
    # use h = z and all-self positives to get the exact closed form
    self_only = [[i] for i in range(n)]
    sym, _ = symmetrized_loss(z, z.copy(), self_only)
    assert sym == pytest.approx(-2.0, abs=1e-12)
    same = np.tile(z[:1], (n, 1))
    sym, _ = symmetrized_loss(same, same.copy(), lists)
    assert sym == pytest.approx(-2.0 * sum(sizes) / n, abs=1e-12)


def test_symmetrized_equals_sum_with_transpose(rng):
    n = 9
    z, h = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    p = positives_from_lists(random_lists(rng, n), n)
    a, ga = symmetrized_loss(z, h, p)
    b, gb = afgrl_loss(z, h, p)
    c, gc = afgrl_loss(z, h, p.T.tocsr())
    assert a == pytest.approx(b + c, abs=1e-12)
    np.testing.assert_allclose(ga, gb + gc, atol=1e-12)


def test_zero_norm_prediction_warns():
    z = np.array([[0.0, 0.0], [1.0, 0.0]])
    h = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        loss, grad = afgrl_loss(z, h, [[0, 1], [1]])
    assert loss == pytest.approx(-0.5, abs=1e-12)
    assert np.all(grad[0] == 0.0)


def test_loss_shape_errors(rng):
    with pytest.raises(DimensionError):
        afgrl_loss(rng.standard_normal((3, 2)), rng.standard_normal((3, 3)), [[0], [1], [2]])
    with pytest.raises(DimensionError):
        afgrl_loss(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), positives_from_lists([[0]], 4))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 25), d=st.integers(1, 5), seed=st.integers(0, 2**31), normalize=st.booleans())
def test_loss_bounds(n, d, seed, normalize):
    r = np.random.default_rng(seed)
    z, h = r.standard_normal((n, d)), r.standard_normal((n, d))
    lists = random_lists(r, n)
    loss, grad = afgrl_loss(z, h, lists, normalize)
    bound = 1.0 if normalize else np.mean([len(p) for p in lists])
    assert -bound - 1e-12 <= loss <= bound + 1e-12
    assert np.all(np.isfinite(grad))
    # gradient is orthogonal to each prediction row (cosine is scale-invariant)
    np.testing.assert_allclose(np.einsum("ij,ij->i", grad, z), 0.0, atol=1e-10)


# --- loop ---------------------------------------------------------------------


def _setup(graph, **overrides):
    cfg = TrainConfig(**{**dict(embedding_dim=8, k=3, clusters=3, kmeans_runs=2, kmeans_iters=10, seed=1), **overrides})
    net = init_network(cfg, graph.num_features)
    return cfg, net, normalize_adjacency(graph), AdamState(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def test_zero_learning_rate_leaves_online_unchanged(sbm_graph):
    cfg, net, a_norm, adam = _setup(sbm_graph, learning_rate=0.0, weight_decay=0.0)
    before = copy.deepcopy(net.online)
    train_epoch(net, sbm_graph, a_norm, adam, cfg, 0)
    for (name, a), (_, b) in zip(before.named_parameters().items(), net.online.named_parameters().items()):
        np.testing.assert_array_equal(a, b, err_msg=name)


def test_tau_one_freezes_target(sbm_graph):
    cfg, net, a_norm, adam = _setup(sbm_graph, tau=1.0)
    before = {k: v.copy() for k, v in net.target.named_tensors().items()}
    for epoch in range(3):
        train_epoch(net, sbm_graph, a_norm, adam, cfg, epoch)
    for name, value in net.target.named_tensors().items():
        np.testing.assert_array_equal(before[name], value, err_msg=name)


def test_golden_loss_trace(sbm_graph):
    result = train(TrainConfig(**GOLDEN_CONFIG), sbm_graph)
    losses = [m.loss for m in result.metrics]
    assert len(losses) == 50
    assert all(b < a for a, b in zip(losses[:10], losses[1:10]))
    np.testing.assert_allclose(losses[:10], GOLDEN_HEAD, rtol=1e-9, atol=1e-12)
    assert losses[-1] == pytest.approx(GOLDEN_LAST, rel=1e-9)


def test_training_is_deterministic(sbm_graph):
    cfg = TrainConfig(**{**GOLDEN_CONFIG, "epochs": 5})
    a, b = train(cfg, sbm_graph), train(cfg, sbm_graph)
    assert [m.csv_row() for m in a.metrics] == [m.csv_row() for m in b.metrics]
    np.testing.assert_array_equal(a.embeddings, b.embeddings)


def test_zero_epochs_returns_initial_embeddings(sbm_graph):
    cfg = TrainConfig(**{**GOLDEN_CONFIG, "epochs": 0})
    result = train(cfg, sbm_graph)
    assert result.metrics == []
    net = init_network(cfg, sbm_graph.num_features)
    expected = encoder_forward(net.online, normalize_adjacency(sbm_graph), sbm_graph.features, EVAL)
    np.testing.assert_array_equal(result.embeddings, expected)


def test_refresh_never_reuses_positives(sbm_graph):
    cfg = TrainConfig(**{**GOLDEN_CONFIG, "epochs": 4, "refresh_period": 0})
    metrics = train(cfg, sbm_graph).metrics
    assert len({m.mean_positives for m in metrics}) == 1
    assert len({m.knn_local_ratio for m in metrics}) == 1


def test_on_epoch_callback_and_csv_row(sbm_graph):
    seen = []
    train(TrainConfig(**{**GOLDEN_CONFIG, "epochs": 3}), sbm_graph, on_epoch=seen.append)
    assert [r.epoch for r in seen] == [0, 1, 2]
    fields = seen[0].csv_row().split(",")
    assert len(fields) == len(EpochRecord.CSV_HEADER.split(","))
    assert float(fields[1]) == seen[0].loss


@pytest.mark.parametrize("bad", [dict(k=0), dict(tau=1.5), dict(epochs=-1), dict(learning_rate=-1.0), dict(seed=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_train_rejects_k_and_clusters_beyond_n(five_node_graph):
    with pytest.raises(ValueError):
        train(TrainConfig(k=5, clusters=2, epochs=1), five_node_graph)
    with pytest.raises(ValueError):
        train(TrainConfig(k=2, clusters=6, epochs=1), five_node_graph)


def test_predictor_hidden_default():
    assert TrainConfig(embedding_dim=10).hidden == 20
    assert TrainConfig(embedding_dim=10, predictor_hidden=7).hidden == 7
