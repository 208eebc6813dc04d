import numpy as np
import pytest

from seqid.dgp import DgpConfig, null_conditional_means, simulate
from seqid.idtest import (TestSetup, cluster_se, compute_theta, first_stage_check, median_run,
                          run_test, score_derivative, test_from_predictions as from_predictions)
from seqid.ml import CrossfitPredictions, DataError, Dataset


def preds(e1, e2):
    return CrossfitPredictions(np.asarray(e1, float), np.asarray(e2, float), "baseline")


def test_theta_trivial_cases():
    e = np.random.default_rng(0).standard_normal((6, 3))
    theta, u = compute_theta(preds(e, e), np.zeros(6))
    assert theta == 0.0 and np.all(u == 0)
    theta, _ = compute_theta(preds(e + 0.7, e), np.zeros(6))
    assert theta == pytest.approx(0.49)


def test_theta_toy_table():
    # five subjects, gaps and perturbations set by hand, summed by hand:
    # u = [1+4+0+3*0.1, 0+1+1-3*0.2, 9+0+0+0, 0.25+0.25+0.25+3*0.5, 4+1+0-3*1]
    g = np.array([[1, 2, 0], [0, 1, -1], [3, 0, 0], [0.5, -0.5, 0.5], [2, 1, 0]], float)
    zeta = np.array([0.1, -0.2, 0.0, 0.5, -1.0])
    theta, u = compute_theta(preds(g, np.zeros_like(g)), zeta)
    expected_u = np.array([5.3, 1.4, 9.0, 2.25, 2.0])
    assert np.allclose(u, expected_u)
    assert theta == pytest.approx(19.95 / 15)


def test_theta_rejects_non_finite():
    e = np.zeros((3, 3))
    e[1, 1] = np.nan
    with pytest.raises(DataError):
        compute_theta(preds(e, np.zeros((3, 3))), np.zeros(3))


def test_cluster_se_cases():
    theta = 0.8
    assert cluster_se([0.0, 6 * theta], theta, 2) == pytest.approx(theta * np.sqrt(2) / 2)
    assert cluster_se([1.0, 1.0, 1.0], 1 / 3, 3) == 0.0
    with pytest.raises(DataError):
        cluster_se([1.0], 1 / 3, 1)


def test_degenerate_se_gives_flag():
    e = np.ones((4, 3))
    res = from_predictions(preds(e, e), np.zeros(4), TestSetup())
    assert res.degenerate and res.pval == 1.0


def test_setup_validation():
    with pytest.raises(ValueError):
        TestSetup(folds=1)
    with pytest.raises(ValueError):
        TestSetup(sigma_zeta=0.0)
    with pytest.raises(ValueError):
        TestSetup(variant="other")
    assert TestSetup().zeta_sd(1000) == 0.5


def data(n=400, seed=0, **kw):
    return simulate(DgpConfig(n=n, p=20, seed=seed, **kw))


def test_run_test_deterministic_and_consistent():
    d = data()
    a = run_test(d, TestSetup(), seed=3)
    b = run_test(d, TestSetup(), seed=3)
    assert a == b
    assert a.tstat == pytest.approx(a.theta_hat / a.se)
    assert 0 <= a.pval <= 1
    two = run_test(d, TestSetup(sidedness="two-sided"), seed=3)
    assert two.pval == pytest.approx(2 * min(a.pval, 1 - a.pval))


def test_theta_non_negative_without_perturbation():
    from seqid.ml import crossfit_means
    p = crossfit_means(data(), "baseline", 2, seed=1)
    theta, _ = compute_theta(p, np.zeros(400))
    assert theta >= 0


def test_median_run():
    d = data(n=300)
    single = run_test(d, TestSetup(), seed=9)
    assert median_run(d, TestSetup(), runs=1, seed=9) == single
    med, runs = median_run(d, TestSetup(), runs=5, seed=9, return_all=True)
    pv = sorted(r.pval for r in runs)
    assert med.pval == pv[2]
    with pytest.raises(ValueError):
        median_run(d, TestSetup(), runs=4)


def test_variants_and_power_direction():
    d = data(n=1500, seed=4, delta=1.0)
    assert run_test(d, TestSetup(), seed=0).pval < 0.01
    d2 = data(n=400, seed=4, design=2)
    res = run_test(d2, TestSetup(variant="z2linked"), seed=0)
    assert 0 <= res.pval <= 1
    w = Dataset(d2.y, d2.d, d2.m, d2.z1, d2.z2, d2.x, w=d2.x[:, :2] + 0.1)
    assert run_test(w, TestSetup(variant="posttreatment"), seed=0).n == 400


def test_first_stage():
    d = simulate(DgpConfig(n=4000, p=20, seed=2))
    p1, p2 = first_stage_check(d)
    assert p1 < 0.01 and p2 < 0.01
    const = Dataset(d.y, d.d, d.m, np.full(d.n, 2.0), d.z2, d.x)
    with pytest.raises(DataError, match="zero variance"):
        first_stage_check(const)


def test_first_stage_noise_instrument_rarely_significant():
    rej = 0
    for r in range(20):
        d = simulate(DgpConfig(n=600, p=10, seed=100 + r))
        noise = np.random.default_rng(r).standard_normal(d.n)
        p1, _ = first_stage_check(Dataset(d.y, d.d, d.m, noise, d.z2, d.x), seed=r)
        rej += p1 < 0.05
    assert rej <= 4


def test_orthogonality_at_truth():
    d = simulate(DgpConfig(n=20000, p=20, seed=1))
    eta = null_conditional_means(d)
    rng = np.random.default_rng(0)
    h1 = 0.3 + np.sin(d.x[:, :3]) + 0.2 * rng.standard_normal((d.n, 3))
    h2 = np.column_stack([d.z1[:, 0], d.z1[:, 0], d.z2[:, 0]]) * 0.5
    dq, se, second = score_derivative(eta, eta, h1, h2)
    assert abs(dq) <= 3 * se + 1e-12
    assert second == pytest.approx(2 * np.mean(((h1 - h2) ** 2).sum(axis=1) / 3), rel=1e-6)
    dl, sel, _ = score_derivative(eta, eta, h1, h2, kind="linear")
    assert abs(dl) > 3 * sel
