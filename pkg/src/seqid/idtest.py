"""
The identification test.

Under the null every instrument is mean-independent of the outcome (or the
mediator) given the relevant conditioning set, so the conditional means
with and without the instrument coincide. The test averages the squared
gaps of the three cross-fitted mean pairs, adds one perturbation ζ_i per
subject so the statistic has a non-degenerate limit under the null, and
studentizes with a subject-clustered standard error.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from ._rng import make_rng
from .ml import (DataError, Dataset, DesignMatrix, CrossFitter, CrossfitPredictions,
                 _arm_of, crossfit_means, make_folds, INNER_FOLDS)

VARIANTS = ("baseline", "z2linked", "posttreatment")


@dataclass(frozen=True)
class TestSetup:
    variant: str = "baseline"
    sigma_zeta: float | None = None  # None means 500/n
    folds: int = 2
    sidedness: str = "one-sided-upper"
    stratify_d: bool = False

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.sigma_zeta is not None and not self.sigma_zeta > 0:
            raise ValueError("sigma_zeta must be positive")
        if self.sidedness not in ("one-sided-upper", "two-sided"):
            raise ValueError(f"unknown sidedness {self.sidedness!r}")

    def zeta_sd(self, n: int) -> float:
        return self.sigma_zeta if self.sigma_zeta is not None else 500.0 / n


@dataclass(frozen=True)
class TestResult:
    theta_hat: float
    se: float
    tstat: float
    pval: float
    n: int
    component_means: tuple
    zeta_sd: float
    degenerate: bool = False
    variant: str = "baseline"
    seed: int | None = None

    __test__ = False

    def as_record(self) -> dict:
        rec = asdict(self)
        rec["component_means"] = list(self.component_means)
        return rec


def compute_theta(preds, zeta):
    """Return ``(theta_hat, u)`` with ``u_i = Σ_j (g_ij² + ζ_i)``."""
    eta1 = preds.eta1 if isinstance(preds, CrossfitPredictions) else np.asarray(preds[0], float)
    eta2 = preds.eta2 if isinstance(preds, CrossfitPredictions) else np.asarray(preds[1], float)
    zeta = np.asarray(zeta, dtype=float)
    if not (np.all(np.isfinite(eta1)) and np.all(np.isfinite(eta2)) and np.all(np.isfinite(zeta))):
        raise DataError("non-finite predictions or perturbations")
    g2 = (eta1 - eta2) ** 2
    u = g2.sum(axis=1) + g2.shape[1] * zeta
    n = u.shape[0]
    return float(u.sum() / (g2.shape[1] * n)), u


def cluster_se(u, theta_hat: float, n: int | None = None, n_comp: int = 3) -> float:
    """Subject-clustered standard error of θ̂; each subject's stacked terms form one cluster."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0] if n is None else n
    if n < 2:
        raise DataError("need at least two subjects for a clustered standard error")
    return float(np.sqrt(np.sum((u - n_comp * theta_hat) ** 2)) / (n_comp * n))


def _pval(t: float, sidedness: str) -> float:
    if sidedness == "two-sided":
        return float(2 * stats.norm.sf(abs(t)))
    return float(stats.norm.sf(t))


def test_from_predictions(preds: CrossfitPredictions, zeta, setup: TestSetup, seed=None) -> TestResult:
    theta, u = compute_theta(preds, zeta)
    n = u.shape[0]
    se = cluster_se(u, theta, n)
    g2 = (preds.eta1 - preds.eta2) ** 2
    comp = tuple(float(v) for v in g2.mean(axis=0))
    sd = float(np.std(zeta)) if setup is None else setup.zeta_sd(n)
    if not se > 1e-300:
        return TestResult(theta, 0.0, 0.0, 1.0, n, comp, sd, True, preds.setup, seed)
    t = theta / se
    side = setup.sidedness if setup is not None else "one-sided-upper"
    return TestResult(theta, se, t, _pval(t, side), n, comp, sd, False, preds.setup, seed)


test_from_predictions.__test__ = False


def run_test(data: Dataset, setup: TestSetup = TestSetup(), seed: int = 0) -> TestResult:
    """Cross-fit the six conditional means, perturb, and studentize."""
    preds = crossfit_means(data, setup, setup.folds, seed, stratify_d=setup.stratify_d)
    zeta = make_rng(seed, 3).normal(0.0, setup.zeta_sd(data.n), data.n)
    return test_from_predictions(preds, zeta, setup, seed)


run_test.__test__ = False


def median_run(data: Dataset, setup: TestSetup = TestSetup(), runs: int = 21, seed: int = 0,
               return_all: bool = False):
    """Repeat the test with seeds ``seed, seed+1, ...`` and return the median-p-value run."""
    if runs < 1 or runs % 2 == 0:
        raise ValueError("runs must be a positive odd number")
    results = [run_test(data, setup, seed + r) for r in range(runs)]
    order = sorted(range(runs), key=lambda i: (results[i].pval, i))
    med = results[order[runs // 2]]
    return (med, results) if return_all else med


def _robust_wald(rd: np.ndarray, rz: np.ndarray) -> float:
    """HC0 Wald p-value for the no-intercept regression of ``rd`` on ``rz``."""
    rz = rz[:, None] if rz.ndim == 1 else rz
    bread = np.linalg.inv(rz.T @ rz)
    coef = bread @ (rz.T @ rd)
    e = rd - rz @ coef
    meat = (rz * e[:, None] ** 2).T @ rz
    V = bread @ meat @ bread
    w = float(coef @ np.linalg.solve(V, coef))
    return float(stats.chi2.sf(w, rz.shape[1]))


def first_stage_check(data: Dataset, setup: TestSetup = TestSetup(), seed: int = 0) -> tuple:
    """Partialling-out relevance tests of ``D ~ Z1 | X`` and ``M ~ Z2 | D, X[, W]``.

    Treatment, mediator and instruments are residualised on the controls
    with cross-fitted lasso; the residual regression gets an HC0 Wald test.
    """
    for role in ("z1", "z2"):
        block = getattr(data, role)
        if np.any(block.std(axis=0) <= 1e-12 * np.maximum(1.0, np.abs(block.mean(axis=0)))):
            raise DataError(f"instrument {role} has zero variance")
    if setup.variant == "posttreatment" and data.w is None:
        raise DataError("posttreatment setup requires a W block")
    k = max(setup.folds, 2)
    outer = make_folds(data.n, k, seed, 11)
    inner = make_folds(data.n, INNER_FOLDS, seed, 12)
    dm = DesignMatrix(data)
    cf = CrossFitter(dm, outer, inner, _arm_of(data.d))

    def resid(role, controls):
        feats = dm.cols(controls)
        cols = dm.index[role]
        out = np.empty((data.n, len(cols)))
        for j, c in enumerate(cols):
            out[:, j] = dm.A[:, c] + dm.mean[c] - cf.predict(feats, c) if feats else dm.A[:, c]
        return out

    ctrl1 = ["x"]
    ctrl2 = ["d", "x"] + (["w"] if setup.variant == "posttreatment" else [])
    p1 = _robust_wald(resid("d", ctrl1)[:, 0], resid("z1", ctrl1))
    p2 = _robust_wald(resid("m", ctrl2)[:, 0], resid("z2", ctrl2))
    return p1, p2


def score_derivative(eta1, eta2, h1, h2, r: float = 1e-3, kind: str = "quadratic"):
    """Centred finite-difference Gateaux derivative of the mean score at ``eta + r·h``.

    Returns ``(derivative, mc_se, second_derivative)``. ``kind="linear"``
    uses the un-squared gap ``η1 - η2`` instead, which is not orthogonal.
    The perturbation ζ enters both evaluations identically and cancels.
    """
    eta1, eta2, h1, h2 = (np.asarray(v, dtype=float) for v in (eta1, eta2, h1, h2))
    if kind == "quadratic":
        f = lambda s: ((eta1 + s * h1 - eta2 - s * h2) ** 2).sum(axis=1) / eta1.shape[1]
    elif kind == "linear":
        f = lambda s: (eta1 + s * h1 - eta2 - s * h2).sum(axis=1) / eta1.shape[1]
    else:
        raise ValueError(f"unknown score kind {kind!r}")
    plus, zero, minus = f(r), f(0.0), f(-r)
    per = (plus - minus) / (2 * r)
    second = float(np.mean(plus - 2 * zero + minus) / r ** 2)
    return float(per.mean()), float(per.std(ddof=1) / np.sqrt(per.size)), second
