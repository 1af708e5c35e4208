import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TINY, gradient_errors, random_pattern, relabel
from mcfqot.dataset import Pattern
from mcfqot.dgcnn import (
    FEASIBLE,
    INFEASIBLE,
    AdamState,
    DgcnnConfig,
    adam_step,
    classify_state,
    fit_normalizer,
    forward,
    init_model,
    loss_and_gradients,
    predict,
    read_model,
    sort_pooling,
    train,
    write_model,
)
from mcfqot.dgcnn.model import sort_order

@pytest.mark.parametrize("dropout_seed", [None, 5])
def test_gradient_check(tiny, dropout_seed):
    model, patterns = tiny
    for name, err in gradient_errors(model, patterns, dropout_seed).items():
        assert err <= 1e-4, name


def test_sort_pooling_example():
    z = np.array([[0.1, 0.5], [0.3, 0.9], [0.2, 0.5]])
    assert sort_pooling(z, 3).tolist() == [[0.3, 0.9], [0.2, 0.5], [0.1, 0.5]]
    assert sort_pooling(z, 1).tolist() == [[0.3, 0.9]]
    padded = sort_pooling(z, 5)
    assert padded.shape == (5, 2) and not padded[3:].any()
    with pytest.raises(ValueError):
        sort_pooling(z, 0)


def test_sort_pooling_identical_rows_follow_ids():
    z = np.array([[1.0, 2.0], [1.0, 2.0]])
    ids = np.array([9, 4])
    assert sort_order(z, ids, 2).tolist() == [1, 0]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(-2, 2), min_size=3, max_size=3), min_size=1, max_size=12), st.integers(1, 14))
def test_sort_pooling_matches_comparator(values, k):
    z = np.array(values, dtype=float) / 2
    ids = np.arange(len(z))[::-1]
    # brute force: last channel desc, then earlier channels right to left desc, then id asc
    ranked = sorted(range(len(z)), key=lambda r: (tuple(-z[r, ::-1]), ids[r]))
    expected = np.zeros((k, 3))
    take = ranked[:k]
    expected[: len(take)] = z[take]
    assert np.array_equal(sort_pooling(z, k, ids), expected)


def test_single_and_empty_graph(rng):
    model = init_model(TINY, 6, seed=0)
    one = Pattern(0, 1, 6, np.array([4]), rng.uniform(0.1, 1, (1, 9)), np.zeros((0, 2), np.int32))
    empty = Pattern(0, 1, 6, np.zeros(0, np.int64), np.zeros((0, 9)), np.zeros((0, 2), np.int32))
    for p in (one, empty):
        score = forward(model, p)
        assert 0 < score < 1


def test_duplicated_batch(tiny):
    model, patterns = tiny
    g = patterns[1]
    loss1, grads1, p1 = loss_and_gradients(model, [g])
    loss2, grads2, p2 = loss_and_gradients(model, [g, g])
    assert p2[0] == p2[1] == p1[0]
    assert loss2 == pytest.approx(loss1, rel=1e-12)
    for name in grads1:
        np.testing.assert_allclose(grads2[name], grads1[name], rtol=1e-10, atol=1e-15)


def test_init_deterministic_and_shapes():
    cfg = DgcnnConfig()
    a, b = init_model(cfg, 435, seed=3), init_model(cfg, 435, seed=3)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert cfg.total_channels == 97 and a.k == 64
    shapes = {k: v.shape for k, v in a.params.items()}
    assert shapes["conv1_w"] == (97, 16)
    assert shapes["conv2_w"] == (5, 16, 32)
    assert shapes["dense_w"] == ((32 - 5 + 1) * 32, 128)
    assert not a.params["dense_b"].any()
    assert init_model(cfg, 10).k == 10
    with pytest.raises(ValueError):
        init_model(DgcnnConfig(sortpool_k=20), 10)


def test_adam_by_hand():
    params = {"w": np.array([1.0, -1.0])}
    state = AdamState()
    adam_step(params, {"w": np.array([2.0, 0.0])}, state, learning_rate=0.1)
    # first step: bias-corrected m = g, v = g^2, so the move is lr * g / (|g| + eps)
    assert params["w"][0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8), rel=1e-14)
    assert params["w"][1] == -1.0
    adam_step(params, {"w": np.array([1.0, 0.0])}, state, learning_rate=0.1)
    m = (0.9 * 0.2 + 0.1 * 1.0) / (1 - 0.9**2)
    v = (0.999 * 0.004 + 0.001 * 1.0) / (1 - 0.999**2)
    assert params["w"][0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8) - 0.1 * m / (np.sqrt(v) + 1e-8), rel=1e-12)
    assert state.step == 2
    with pytest.raises(ValueError):
        adam_step(params, {"w": np.zeros(3)}, state)


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([0.5, 2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState())
    assert params["w"].tolist() == [0.5, 2.0]


def blobs(count=200, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for s in range(count):
        y = s % 2
        rows = np.abs(rng.normal(3 + 2 * y, 0.7, (1, 9))) + 0.1
        out.append(Pattern(s, y, 10, np.array([rng.integers(1, 11)]), rows, np.zeros((0, 2), np.int32)))
    return out


BLOB_CONFIG = DgcnnConfig(sortpool_k=10, conv2_kernel=3, learning_rate=1e-3, max_epochs=100, batch_size=20)


def test_learns_separable_blobs():
    patterns = blobs()
    model, history = train(patterns, BLOB_CONFIG)
    assert len(history) == 100
    assert history.column("train_acc").max() >= 0.95
    scores = predict(model, blobs(seed=1))
    assert np.mean((scores >= 0.5) == (np.arange(200) % 2 == 1)) >= 0.95
    loss = history.column("loss")
    blocks = loss.reshape(10, 10).mean(axis=1)
    assert np.all(np.diff(blocks) <= 0)


def test_training_is_reproducible():
    cfg = DgcnnConfig(sortpool_k=10, conv2_kernel=3, learning_rate=1e-3, max_epochs=3, batch_size=20)
    a, ha = train(blobs(60), cfg)
    b, hb = train(blobs(60), cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert ha.column("loss").tolist() == hb.column("loss").tolist()


def test_early_stopping_bounds_history():
    cfg = DgcnnConfig(sortpool_k=10, conv2_kernel=3, max_epochs=40, patience=2, val_fraction=0.2, batch_size=20)
    _, history = train(blobs(60), cfg)
    assert 1 <= len(history) <= 40
    assert history.best_epoch is not None and history.best_epoch <= len(history)


def test_classify_state_threshold():
    model = init_model(TINY, 6, seed=0)
    for name in model.params:
        model.params[name][...] = 0.0  # every score becomes sigmoid(out_b) = 0.5
    p = Pattern(0, 1, 6, np.array([2]), np.ones((1, 9)), np.zeros((0, 2), np.int32))
    assert forward(model, p) == 0.5
    assert classify_state(model, p) == FEASIBLE
    assert classify_state(model, p, threshold=0.6) == INFEASIBLE
    model.params["out_b"][0] = 2.0
    assert classify_state(model, p, threshold=0.85) == FEASIBLE
    assert classify_state(model, p, threshold=0.9) == INFEASIBLE


def test_model_file_round_trip(tiny):
    model, patterns = tiny
    buf = io.StringIO()
    write_model(model, buf, fingerprint="abc")
    buf.seek(0)
    back = read_model(buf)
    assert back.config == model.config and back.n == model.n
    assert all(np.array_equal(back.params[k], model.params[k]) for k in model.params)
    assert np.array_equal(back.norm_max, model.norm_max)
    assert [forward(back, p) for p in patterns] == [forward(model, p) for p in patterns]
    with pytest.raises(ValueError):
        read_model(io.StringIO("something else\n"))


def test_dropout_only_with_rng(tiny):
    model, patterns = tiny
    assert forward(model, patterns[0]) == forward(model, patterns[0])
    plain = loss_and_gradients(model, patterns)[2]
    assert np.array_equal(plain, loss_and_gradients(model, patterns)[2])
    dropped = loss_and_gradients(model, patterns, rng=np.random.default_rng(0))[2]
    assert not np.array_equal(plain, dropped)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relabeling_connections_keeps_score(seed):
    rng = np.random.default_rng(seed)
    model = init_model(DgcnnConfig(conv_channels=(8, 8, 1), sortpool_k=12, conv2_kernel=3), 20, seed=2)
    pattern = random_pattern(rng, 20, int(rng.integers(1, 15)), 1)
    fit_normalizer(model, [pattern])
    moved = relabel(pattern, rng.permutation(20) + 1)
    assert forward(model, moved) == pytest.approx(forward(model, pattern), rel=1e-9)
