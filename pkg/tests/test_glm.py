import math

import numpy as np
import pytest
from scipy.special import expit

from nflcast import glm


def make_data(n=300, d=6, seed=0, sep=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * rng.uniform(0.5, 5, size=d) + rng.normal(size=d)
    w = rng.normal(size=d) * sep / X.std(axis=0)
    y = (rng.random(n) < expit(X @ w - X.mean(axis=0) @ w + 0.3)).astype(float)
    return X, y


def kkt_residual(X, y, res, penalty, lam):
    r = expit(X @ res.w + res.b) - y
    gw = X.T @ r / len(y)
    gb = r.mean()
    if penalty == "l2":
        return max(abs(gb), np.abs(gw + 2 * lam * res.w).max())
    nz = res.w != 0
    viol = np.abs(gw[nz] + lam * np.sign(res.w[nz]))
    zero = np.maximum(np.abs(gw[~nz]) - lam, 0)
    return max(abs(gb), viol.max(initial=0), zero.max(initial=0))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X, y = make_data(200, 5, seed=1)
    for _ in range(20):
        w = rng.normal(size=5) * 0.3
        b = float(rng.normal())
        lam = float(rng.choice([0, 1, 5]))
        gw, gb = glm.gradient(X, y, w, b, lam)
        h = 1e-6
        num = np.array([(glm.objective(X, y, w + h * e, b, "l2", lam)
                         - glm.objective(X, y, w - h * e, b, "l2", lam)) / (2 * h)
                        for e in np.eye(5)])
        nb = (glm.objective(X, y, w, b + h, "l2", lam) - glm.objective(X, y, w, b - h, "l2", lam)) / (2 * h)
        assert np.linalg.norm(num - gw) <= 1e-6 * max(1.0, np.linalg.norm(gw))
        assert abs(nb - gb) <= 1e-6 * max(1.0, abs(gb))


@pytest.mark.parametrize("penalty, lam", [("l2", 0.0), ("l2", 0.01), ("l2", 1.0),
                                          ("l1", 0.001), ("l1", 0.02)])
def test_solution_is_stationary(penalty, lam):
    X, y = make_data()
    res = glm.fit_arrays(X, y, penalty, lam)
    assert res.converged
    assert kkt_residual(X, y, res, penalty, lam) < 1e-4


def test_high_dimensional_path_is_stationary():
    X, y = make_data(n=300, d=glm.NEWTON_MAX_DIM + 20, seed=3, sep=0.2)
    res = glm.fit_arrays(X, y, "l2", 0.05)
    assert kkt_residual(X, y, res, "l2", 0.05) < 1e-5


def test_objective_nonincreasing_per_iteration():
    X, y = make_data()
    for penalty, lam in (("l2", 0.0), ("l2", 5.0), ("l1", 0.01), ("l1", 1.0)):
        trace = []
        glm.fit_arrays(X, y, penalty, lam, trace=trace)
        assert len(trace) >= 1
        assert all(b <= a + 1e-12 * max(1, abs(a)) for a, b in zip(trace, trace[1:]))


def test_l1_sparsity_monotone_over_grid():
    X, y = make_data(400, 12, seed=4)
    zeros = [int(np.sum(glm.fit_arrays(X, y, "l1", lam).w == 0)) for lam in glm.LAMBDA_GRID]
    assert zeros == sorted(zeros)
    assert zeros[-1] == 12


def test_l2_norm_monotone_over_grid():
    X, y = make_data(400, 12, seed=5)
    norms = [np.linalg.norm(glm.fit_arrays(X, y, "l2", lam).w) for lam in glm.LAMBDA_GRID]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))


def test_symmetric_separable_data():
    m = glm.train([({"x": -1.0}, 0), ({"x": 1.0}, 1)], "l2", 1.0)
    assert m.coef["x"] > 0
    assert glm.predict_prob(m, {"x": 0.0}) == pytest.approx(0.5, abs=1e-9)


def test_heavy_l1_gives_base_rate_intercept():
    X, y = make_data(500, 4, seed=6)
    res = glm.fit_arrays(X, y, "l1", 1000)
    assert np.all(res.w == 0)
    p = y.mean()
    assert res.b == pytest.approx(math.log(p / (1 - p)), abs=1e-6)


def test_single_class_refused_at_zero_lambda():
    with pytest.raises(ValueError):
        glm.fit_arrays(np.ones((3, 1)), np.ones(3), "l2", 0)
    res = glm.fit_arrays(np.ones((3, 1)), np.ones(3), "l2", 1)
    assert np.isfinite(res.b)


def test_nan_feature_rejected():
    with pytest.raises(ValueError):
        glm.train([({"x": float("nan")}, 0), ({"x": 1.0}, 1)], "l2", 1)


def test_bad_penalty_and_lambda():
    with pytest.raises(ValueError):
        glm.fit_arrays(np.ones((2, 1)), np.array([0.0, 1.0]), "l3", 1)
    with pytest.raises(ValueError):
        glm.fit_arrays(np.ones((2, 1)), np.array([0.0, 1.0]), "l2", -1)


def test_deterministic_bitwise():
    X, y = make_data(seed=7)
    a = glm.fit_arrays(X, y, "l1", 0.01)
    b = glm.fit_arrays(X, y, "l1", 0.01)
    assert a.w.tobytes() == b.w.tobytes() and a.b == b.b


def test_warm_start_reaches_same_optimum():
    X, y = make_data(seed=8)
    cold = glm.fit_arrays(X, y, "l2", 1.0)
    warm = glm.fit_arrays(X, y, "l2", 1.0, init=(np.ones(X.shape[1]), 2.0))
    assert np.allclose(cold.w, warm.w, atol=1e-6)


def test_constant_column_gets_zero_weight_under_l2():
    X, y = make_data(seed=9)
    X = np.hstack([X, np.full((len(y), 1), 3.0)])
    res = glm.fit_arrays(X, y, "l2", 1.0)
    assert abs(res.w[-1]) < 1e-8


# -- prediction ---------------------------------------------------------------


def test_predict_fixture():
    m = glm.ModelWeights({"x": 2.0}, -1.0)
    assert glm.predict_prob(m, {"x": 1.0}) == pytest.approx(0.7310585786)


def test_zero_model():
    m = glm.ModelWeights({"x": 0.0}, 0.0)
    assert glm.predict_prob(m, {"x": 5.0}) == 0.5
    assert glm.predict_label(m, {"x": 5.0}) == 1


def test_sign_flip_reflects_probability():
    a = glm.ModelWeights({"x": 1.3}, 0.0)
    b = glm.ModelWeights({"x": -1.3}, 0.0)
    assert glm.predict_prob(a, {"x": 0.7}) == pytest.approx(1 - glm.predict_prob(b, {"x": 0.7}))


@pytest.mark.parametrize("z, label", [(math.log(0.49 / 0.51), 0), (math.log(0.51 / 0.49), 1)])
def test_label_threshold(z, label):
    assert glm.predict_label(glm.ModelWeights({}, z), {}) == label


def test_missing_features_contribute_zero():
    m = glm.ModelWeights({"x": 5.0}, 0.0)
    assert glm.predict_prob(m, {"other": 1.0}) == 0.5


def test_model_weights_invariants():
    with pytest.raises(ValueError):
        glm.ModelWeights({"x": float("inf")}, 0.0)
    with pytest.raises(ValueError):
        glm.ModelWeights({}, 0.0, lam=-1)


def test_top_features_ordering():
    m = glm.ModelWeights({"b": 1.0, "a": 1.0, "c": -2.0, "d": 0.5}, 0.0)
    pos, neg = glm.top_features(m, 2)
    assert pos == [("a", 1.0), ("b", 1.0)]
    assert neg == [("c", -2.0), ("d", 0.5)]
    assert len(glm.top_features(m, 10)[0]) == 4
    assert glm.top_features(m, 0) == ([], [])


def test_dump_weights(tmp_path):
    m = glm.ModelWeights({"a": 0.5, "b": -2.0}, 0.1, "l1", 5)
    glm.dump_weights(m, tmp_path / "w.tsv")
    lines = (tmp_path / "w.tsv").read_text().splitlines()
    assert lines[0] == "# penalty=l1 lambda=5"
    assert [ln.split("\t")[0] for ln in lines[2:]] == ["(intercept)", "b", "a"]
