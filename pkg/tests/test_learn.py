import itertools

import numpy as np
import pytest

from histopipe.errors import SingleClassInput, StageDimMismatch
from histopipe.evaluation import auc_exact, roc_curve
from histopipe.learn.mlp import init_params, loss_and_grads, sigmoid, train_mlp
from histopipe.learn.pipeline import load_model, make_pipeline, predict, predict_score, save_model
from histopipe.learn.svm import rbf_kernel, train_svm
from histopipe.learn.trees import (
    ForestModel,
    GbdtModel,
    Tree,
    best_gini_split,
    gini,
    train_forest,
    train_gbdt,
)

XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([0, 1, 1, 0])


def blobs(n=400, seed=0, sep=3.0, d=2):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, d)) + sep * y[:, None]
    return X, y


# --- MLP -------------------------------------------------------------------


def test_mlp_xor():
    accs = []
    for seed in range(5):
        m = train_mlp(XOR_X, XOR_Y, arch=[2, 8, 1], epochs=5000, lr=0.5, batch=4, seed=seed)
        accs.append(np.mean((m.predict_score(XOR_X) >= 0.5) == XOR_Y))
    assert max(accs) == 1.0


def test_mlp_constant_label():
    X = np.random.default_rng(0).normal(size=(20, 3))
    m = train_mlp(X, np.ones(20), epochs=300, lr=0.1, seed=0)
    assert np.all(m.predict_score(X) > 0.99)
    assert all(np.isfinite(m.loss_history))


def finite_difference_error(seed=0):
    rng = np.random.default_rng(seed)
    ws, bs = init_params([3, 4, 1], rng)
    # shift biases off zero so no ReLU sits exactly at its kink
    bs = [b + rng.normal(0, 0.3, size=b.shape) for b in bs]
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 2, size=6).astype(float)
    _, gw, gb = loss_and_grads(ws, bs, X, y)
    eps = 1e-6
    worst = 0.0
    for params, grads in ((ws, gw), (bs, gb)):
        for P, G in zip(params, grads):
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + eps
                up = loss_and_grads(ws, bs, X, y)[0]
                P[idx] = old - eps
                down = loss_and_grads(ws, bs, X, y)[0]
                P[idx] = old
                num = (up - down) / (2 * eps)
                rel = abs(num - G[idx]) / max(abs(num), abs(G[idx]), 1e-8)
                worst = max(worst, rel)
    return worst


def test_mlp_gradient_check():
    assert finite_difference_error(0) < 1e-4


def test_mlp_deterministic_and_round_trip(tmp_path):
    X, y = blobs(60, d=3)
    a = train_mlp(X, y, epochs=5, seed=4)
    b = train_mlp(X, y, epochs=5, seed=4)
    assert a.predict_score(X).tobytes() == b.predict_score(X).tobytes()
    save_model(a, tmp_path / "m.json")
    back, doc = load_model(tmp_path / "m.json")
    assert doc["format"] == "histopipe-model" and doc["version"] == 1
    assert back.predict_score(X).tobytes() == a.predict_score(X).tobytes()


# --- forest ----------------------------------------------------------------


def brute_gini_split(x, y):
    best = None
    xs = np.unique(x)
    for lo, hi in zip(xs[:-1], xs[1:]):
        t = (lo + hi) / 2
        left, right = y[x <= t], y[x > t]
        child = sum(len(s) * gini([np.sum(s == 0), np.sum(s == 1)]) for s in (left, right)) / len(y)
        gain = gini([np.sum(y == 0), np.sum(y == 1)]) - child
        if best is None or gain > best[1] + 1e-15:
            best = (t, gain)
    return best


@pytest.mark.parametrize("y", [[0, 0, 1, 1], [0, 1, 0, 1], [1, 0, 0, 0], [0, 1, 1, 0]])
def test_gini_split_matches_exhaustive(y):
    x = np.array([0.3, 1.1, 2.0, 4.5])
    y = np.array(y)
    f, thr, gain = best_gini_split(x[:, None], y)
    t_ref, g_ref = brute_gini_split(x, y)
    assert f == 0 and thr == t_ref
    assert gain == pytest.approx(g_ref, abs=1e-15)


def test_single_tree_fits_training_set():
    X, y = blobs(80, sep=0.5)
    f = train_forest(X, y, n_trees=1, seed=0)
    # a bootstrap sample sees only part of the data; check on what it saw
    rng = np.random.default_rng(0)
    boot = rng.integers(0, len(y), size=len(y))
    assert np.all(predict(f, X[boot]) == y[boot])


def test_forest_separable_blobs():
    X, y = blobs(400, seed=1)
    Xt, yt = blobs(400, seed=2)
    f = train_forest(X, y, n_trees=100, seed=3)
    assert np.mean(predict(f, Xt) == yt) >= 0.95


def test_forest_vote_fraction_is_mode():
    X, y = blobs(100, seed=5, sep=1.0)
    f = train_forest(X, y, n_trees=15, seed=0)
    votes = f.tree_votes(X)
    mode = (votes.sum(axis=0) * 2 > votes.shape[0]).astype(int)
    assert np.array_equal(predict(f, X), mode)
    unanimous = ForestModel([f.trees[0]] * 100, 2, 1)
    assert set(np.unique(unanimous.predict_score(X))) <= {0.0, 1.0}


def test_forest_deterministic_and_round_trip():
    X, y = blobs(60)
    a = train_forest(X, y, n_trees=5, seed=7)
    b = ForestModel.from_dict(train_forest(X, y, n_trees=5, seed=7).to_dict())
    assert a.predict_score(X).tobytes() == b.predict_score(X).tobytes()


# --- GBDT ------------------------------------------------------------------


def test_gbdt_zero_rounds_is_prior():
    X, y = blobs(40)
    y = (np.arange(40) < 10).astype(int)
    m = train_gbdt(X, y, n_rounds=0)
    np.testing.assert_allclose(m.predict_score(X), 0.25, atol=1e-15)


def test_gbdt_hand_computed_leaf():
    X = np.zeros((4, 1))
    y = np.array([1, 1, 1, 0])
    m = train_gbdt(X, y, n_rounds=1, max_depth=0, lr=1.0, reg_lambda=0.0, base_score=0.5, min_child_weight=0.0)
    # G = 4*0.5 - 3 = -1, H = 4*0.25 = 1, weight = -G/(H+lambda) = 1
    assert m.trees[0].value[0] == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(m.predict_score(X), sigmoid(1.0), atol=1e-15)


def test_gbdt_loss_non_increasing():
    X, y = blobs(200, sep=1.0, seed=9)
    m = train_gbdt(X, y, n_rounds=30)
    assert np.all(np.diff(m.loss_history) <= 1e-12)
    assert max(t.depth() for t in m.trees) <= 6


def test_gbdt_lr_zero_predicts_base_rate():
    X, y = blobs(50, seed=2)
    y[:5] = 1
    m = train_gbdt(X, y, n_rounds=5, lr=0.0)
    np.testing.assert_allclose(m.predict_score(X), y.mean(), atol=1e-12)


def test_gbdt_single_class():
    with pytest.raises(SingleClassInput):
        train_gbdt(np.zeros((3, 1)), np.ones(3))


def test_gbdt_round_trip():
    X, y = blobs(60)
    m = train_gbdt(X, y, n_rounds=4)
    back = GbdtModel.from_dict(m.to_dict())
    assert back.predict_score(X).tobytes() == m.predict_score(X).tobytes()


# --- SVM -------------------------------------------------------------------


def test_svm_separable_pair():
    X = np.array([[-1.0], [1.0]])
    m = train_svm(X, np.array([0, 1]), C=100.0, epochs=200)
    f = m.decision_function(X)
    assert f[0] < 0 < f[1]
    boundary = -m.b / m.w[0]
    assert -1 < boundary < 1


def test_svm_rbf_xor():
    m = train_svm(XOR_X, XOR_Y, kernel="rbf", gamma=1.0, C=10.0, epochs=200)
    assert np.all(predict(m, XOR_X) == XOR_Y)


def test_rbf_kernel_properties(rng):
    A = rng.normal(size=(7, 3))
    K = rbf_kernel(A, A, 0.7)
    np.testing.assert_allclose(np.diag(K), 1.0, atol=1e-15)
    np.testing.assert_allclose(K, K.T, atol=1e-15)
    B = rng.normal(size=(5, 3))
    np.testing.assert_allclose(rbf_kernel(A, B, 0.7), rbf_kernel(B, A, 0.7).T, atol=1e-15)


def test_svm_single_class():
    with pytest.raises(SingleClassInput):
        train_svm(np.zeros((3, 2)), np.zeros(3))


def test_svm_auc_same_for_raw_and_sigmoid():
    X, y = blobs(120, sep=0.8, seed=4)
    m = train_svm(X, y, epochs=20)
    raw = m.decision_function(X)
    assert auc_exact(roc_curve(y, raw)) == auc_exact(roc_curve(y, m.predict_score(X)))


# --- shared scoring and pipelines -------------------------------------------


@pytest.mark.parametrize("kind", ["mlp", "forest", "gbdt", "svm"])
def test_scores_in_unit_interval(kind):
    X, y = blobs(60, sep=6.0)
    X = X * 50  # push decision values into saturation
    model = make_pipeline([kind]).fit(X, y, seed=0)
    s = model.predict_score(X)
    assert np.all((s >= 0) & (s <= 1))


def test_predict_thresholds():
    class Fixed:
        def predict_score(self, X):
            return np.array([0.0, 0.5, 1.0])

    m = Fixed()
    assert predict(m, None, 0.0).tolist() == [1, 1, 1]
    assert predict(m, None, 1.01).tolist() == [0, 0, 0]
    assert predict(m, None, 0.5).tolist() == [0, 1, 1]
    assert predict_score(m, None).tolist() == [0.0, 0.5, 1.0]


def test_pipeline_requires_terminal_classifier():
    with pytest.raises(StageDimMismatch):
        make_pipeline(["scaler", "pca"])
    with pytest.raises(StageDimMismatch):
        make_pipeline(["svm", "scaler"])
    with pytest.raises(StageDimMismatch):
        make_pipeline(["svm", "forest"])


def test_full_rank_pca_then_svm_matches_plain_svm():
    X, y = blobs(200, sep=2.0, d=4, seed=8)
    plain = make_pipeline(["svm"]).fit(X, y, seed=1)
    rotated = make_pipeline([("pca", {"k": 4}), "svm"]).fit(X, y, seed=1)
    a = np.mean(predict(plain, X) == y)
    b = np.mean(predict(rotated, X) == y)
    assert abs(a - b) <= 0.03


def test_pipeline_dim_mismatch_and_determinism(tmp_path):
    X, y = blobs(50, d=3)
    p = make_pipeline(["scaler", ("pca", {"k": 2}), "gbdt"]).fit(X, y, seed=0)
    assert p.predict_score(X).tobytes() == p.predict_score(X).tobytes()
    with pytest.raises(StageDimMismatch):
        p.predict_score(np.ones((2, 5)))
    save_model(p, tmp_path / "p.json")
    back, _ = load_model(tmp_path / "p.json")
    assert back.predict_score(X).tobytes() == p.predict_score(X).tobytes()


def test_tree_dict_round_trip():
    X, y = blobs(30)
    t = train_forest(X, y, n_trees=1).trees[0]
    u = Tree.from_dict(t.to_dict())
    assert np.array_equal(u.apply(X), t.apply(X))
    # every internal node has two children
    internal = np.nonzero(u.feature >= 0)[0]
    assert np.all(u.left[internal] > 0) and np.all(u.right[internal] > 0)


def test_all_kinds_share_score_interface():
    X, y = blobs(40)
    for kind, params in itertools.product(["svm"], [{"kernel": "linear"}, {"kernel": "rbf"}]):
        m = make_pipeline([(kind, params)]).fit(X, y, seed=2)
        assert m.predict_score(X).shape == (40,)
