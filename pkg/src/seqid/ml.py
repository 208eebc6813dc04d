"""
Lasso regression and cross-fitted conditional means.

The lasso minimises ``(1/2n)·|y - a - Xb|² + λ·|b|₁`` on standardized
columns by covariance-update coordinate descent. All fits here work from
sufficient statistics: the joint data matrix is split into row blocks
(outer fold × inner CV fold × treatment arm) and each block's sums and
cross-products are computed once. A regression on any union of blocks, and
the held-out error of that fit on any other block, is then a function of
summed moments only, so a 50-point cross-validated path costs a few
Gram-matrix operations instead of repeated passes over the data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from ._rng import make_rng

TOL = 1e-7
MAX_SWEEPS = 10_000
N_GRID = 50
GRID_RATIO = 1e-3
INNER_FOLDS = 5
MIN_ARM = 100


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


def _as_block(v, n=None, name="column"):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError(f"{name} must be a vector or a matrix")
    if n is not None and a.shape[0] != n:
        raise DataError(f"{name} has {a.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains missing or non-finite values")
    return a


@dataclass(frozen=True)
class Dataset:
    """Observed variables; instruments and covariates are stored as 2-d blocks."""

    y: np.ndarray
    d: np.ndarray
    m: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    x: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        y = _as_block(self.y, name="y")
        n = y.shape[0]
        for name in ("y", "d", "m"):
            v = _as_block(getattr(self, name), n, name)
            if v.shape[1] != 1:
                raise DataError(f"{name} must be a single column")
            object.__setattr__(self, name, v[:, 0])
        for name in ("z1", "z2"):
            object.__setattr__(self, name, _as_block(getattr(self, name), n, name))
        x = self.x
        if x is None or np.size(x) == 0:
            x = np.empty((n, 0))
        object.__setattr__(self, "x", _as_block(x, n, "x"))
        object.__setattr__(self, "w", _as_block(self.w, n, "w"))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class LassoFit:
    intercept: float
    coefficients: np.ndarray
    lam: float
    means: np.ndarray
    scales: np.ndarray

    def predict(self, features) -> np.ndarray:
        return self.intercept + np.asarray(features, dtype=float) @ self.coefficients


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray  # 1-based
    seed: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k + 1)[1:]


def make_folds(n: int, k: int, seed: int, stream: int = 0) -> FoldAssignment:
    """Random near-equal split of ``n`` rows into ``k`` folds."""
    if k < 2:
        raise ValueError("need at least two folds")
    if n < k:
        raise DataError(f"cannot split {n} observations into {k} folds")
    perm = make_rng(seed, 7, stream).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % k + 1
    return FoldAssignment(k, fold_of, seed)


# ---------------------------------------------------------------- coordinate descent

@numba.njit(cache=True, nogil=True)
def _cd_path(G, c, lams, tol, max_sweeps, beta0):
    """Solve ``min ½βᵀGβ - cᵀβ + λ|β|₁`` along ``lams`` with warm starts."""
    p = c.shape[0]
    n_lam = lams.shape[0]
    out = np.zeros((n_lam, p))
    beta = beta0.copy()
    r = c.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for k in range(p):
                r[k] -= G[j, k] * beta[j]
    for li in range(n_lam):
        lam = lams[li]
        full = True
        for _ in range(max_sweeps):
            maxd = 0.0
            for j in range(p):
                gjj = G[j, j]
                if gjj <= 0.0:
                    continue
                old = beta[j]
                if not full and old == 0.0:
                    continue
                z = r[j] + gjj * old
                if z > lam:
                    new = (z - lam) / gjj
                elif z < -lam:
                    new = (z + lam) / gjj
                else:
                    new = 0.0
                if new != old:
                    d = new - old
                    for k in range(p):
                        r[k] -= G[j, k] * d
                    beta[j] = new
                    if abs(d) > maxd:
                        maxd = abs(d)
            if maxd < tol:
                if full:
                    break
                full = True  # active set converged; confirm with a full sweep
            else:
                full = False
        out[li] = beta
    return out


def _standardize(n, sx, sy, cxx, cxy):
    mx = sx / n
    my = sy / n
    cov = cxx / n - np.outer(mx, mx)
    cv = cxy / n - mx * my
    var = np.diag(cov).copy()
    zero = var <= 1e-12 * np.maximum(1.0, mx * mx)
    sd = np.sqrt(np.where(zero, 1.0, var))
    G = cov / np.outer(sd, sd)
    G[zero, :] = 0.0
    G[:, zero] = 0.0
    c = cv / sd
    c[zero] = 0.0
    return G, c, mx, my, sd


def lambda_grid(lmax: float, n_grid: int = N_GRID, ratio: float = GRID_RATIO) -> np.ndarray:
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * ratio, n_grid)


# ---------------------------------------------------------------- moment tables

class MomentTable:
    """Per-block count, sums and cross-products of the columns of ``A``."""

    def __init__(self, A: np.ndarray, block: np.ndarray, n_blocks: int):
        self.A = A
        self.block = block
        self.n_blocks = n_blocks
        q = A.shape[1]
        self.cnt = np.bincount(block, minlength=n_blocks).astype(float)
        self.S = np.zeros((n_blocks, q))
        self.C = np.zeros((n_blocks, q, q))
        order = np.argsort(block, kind="stable")
        bounds = np.searchsorted(block[order], np.arange(n_blocks + 1))
        self._rows = [order[bounds[b]:bounds[b + 1]] for b in range(n_blocks)]
        for b, rows in enumerate(self._rows):
            if rows.size:
                Ab = A[rows]
                self.S[b] = Ab.sum(axis=0)
                self.C[b] = Ab.T @ Ab

    def regression(self, feats, target):
        """Per-block moments ``(n, Sx, Sy, Cxx, Cxy, Cyy)`` for one regression.

        ``target`` is a column index of ``A`` or a length-n vector.
        """
        feats = np.asarray(feats, dtype=np.int64)
        sx = self.S[:, feats]
        cxx = self.C[:, feats[:, None], feats[None, :]]
        if np.ndim(target) == 0:
            t = int(target)
            return self.cnt, sx, self.S[:, t], cxx, self.C[:, feats, t], self.C[:, t, t]
        t = np.asarray(target, dtype=float)
        sy = np.zeros(self.n_blocks)
        cxy = np.zeros((self.n_blocks, feats.size))
        cyy = np.zeros(self.n_blocks)
        for b, rows in enumerate(self._rows):
            if rows.size:
                tb = t[rows]
                sy[b] = tb.sum()
                cyy[b] = tb @ tb
                cxy[b] = self.A[rows][:, feats].T @ tb
        return self.cnt, sx, sy, cxx, cxy, cyy


def _sum_blocks(mom, mask):
    return tuple(m[mask].sum(axis=0) for m in mom)


def _fit_from_moments(tot, lams, beta0=None):
    n, sx, sy, cxx, cxy, _ = tot
    G, c, mx, my, sd = _standardize(n, sx, sy, cxx, cxy)
    if beta0 is None:
        beta0 = np.zeros(c.size)
    betas = _cd_path(G, c, np.asarray(lams, dtype=float), TOL, MAX_SWEEPS, beta0)
    b = betas / sd
    a = my - b @ mx
    return a, b, betas, (G, c, mx, my, sd)


def _sse(tot, a, b):
    """Squared error of ``a + Xb`` (one row of ``a``/``b`` per λ) on summed moments."""
    n, sx, sy, cxx, cxy, cyy = tot
    quad = np.einsum("lp,pq,lq->l", b, cxx, b)
    return cyy - 2 * a * sy - 2 * b @ cxy + n * a * a + 2 * a * (b @ sx) + quad


def cv_fit(mom, train: np.ndarray, inner_of_block: np.ndarray, n_inner: int,
           n_grid: int = N_GRID, ratio: float = GRID_RATIO):
    """Cross-validated lasso on the blocks flagged in ``train``.

    Returns ``(intercept, coefs, lam)`` refitted on all training blocks at
    the CV-selected λ (minimum mean squared error, ties to the larger λ).
    """
    tot = _sum_blocks(mom, train)
    if tot[0] < 2:
        raise DataError("fewer than two training observations")
    G, c, *_ = _standardize(*tot[:5])
    lams = lambda_grid(float(np.max(np.abs(c))) if c.size else 0.0, n_grid, ratio)
    if lams.size > 1:
        err = np.zeros(lams.size)
        used = 0
        for j in range(n_inner):
            val = train & (inner_of_block == j)
            fit = train & (inner_of_block != j)
            if not val.any() or mom[0][val].sum() == 0 or mom[0][fit].sum() < 2:
                continue
            a, b, _, _ = _fit_from_moments(_sum_blocks(mom, fit), lams)
            err += _sse(_sum_blocks(mom, val), a, b)
            used += 1
        if used < 2:
            raise DataError("too few observations for cross-validation")
        k = int(np.argmin(err))
    else:
        k = 0
    a, b, _, _ = _fit_from_moments(tot, lams[: k + 1])
    return float(a[-1]), b[-1], float(lams[k])


# ---------------------------------------------------------------- public lasso API

def _table_for(features, target, inner=None):
    X = _as_block(features, name="features")
    y = _as_block(target, X.shape[0], "target")[:, 0]
    if X.shape[0] < 2:
        raise DataError("need at least two observations")
    # centre first to keep cross-product cancellation small
    mu = np.concatenate([X.mean(axis=0), [y.mean()]])
    A = np.column_stack([X, y]) - mu
    block = np.zeros(X.shape[0], dtype=np.int64) if inner is None else inner
    nb = int(block.max()) + 1
    return MomentTable(A, block, nb), mu, X.shape[1]


def lambda_max(features, target) -> float:
    """Smallest λ at which every standardized coefficient is zero."""
    mt, _, p = _table_for(features, target)
    G, c, *_ = _standardize(*_sum_blocks(mt.regression(range(p), p), np.ones(1, bool))[:5])
    return float(np.max(np.abs(c))) if p else 0.0


def lasso_fit(features, target, lam: float, max_sweeps: int = MAX_SWEEPS) -> LassoFit:
    """Lasso at a fixed λ; intercept unpenalised, constant columns get coefficient 0."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    mt, mu, p = _table_for(features, target)
    tot = _sum_blocks(mt.regression(range(p), p), np.ones(1, bool))
    G, c, mx, my, sd = _standardize(*tot[:5])
    beta = _cd_path(G, c, np.array([float(lam)]), TOL, int(max_sweeps), np.zeros(p))[0]
    b = beta / sd
    a = my - b @ mx + mu[-1] - b @ mu[:-1]
    return LassoFit(float(a), b, float(lam), mx + mu[:-1], sd)


def lasso_objective(fit: LassoFit, features, target) -> float:
    X = np.asarray(features, dtype=float)
    r = np.asarray(target, dtype=float) - fit.predict(X)
    return 0.5 * np.mean(r * r) + fit.lam * np.sum(np.abs(fit.coefficients * fit.scales))


def select_lambda(features, target, folds: int = INNER_FOLDS, seed: int = 0) -> float:
    """K-fold CV choice of λ on the standard 50-point geometric grid."""
    n = np.shape(target)[0]
    fa = make_folds(n, folds, seed)
    mt, _, p = _table_for(features, target, fa.fold_of - 1)
    mom = mt.regression(range(p), p)
    _, _, lam = cv_fit(mom, np.ones(folds, bool), np.arange(folds), folds)
    return lam


def lasso_cv(features, target, folds: int = INNER_FOLDS, seed: int = 0) -> LassoFit:
    lam = select_lambda(features, target, folds, seed)
    return lasso_fit(features, target, lam)


# ---------------------------------------------------------------- cross-fitting

@dataclass(frozen=True)
class CrossfitPredictions:
    eta1: np.ndarray
    eta2: np.ndarray
    setup: str
    folds: FoldAssignment | None = None
    lambdas: dict = field(default_factory=dict)


def regression_specs(variant: str) -> list:
    """The three (target, base conditioning set, added instrument) triples."""
    if variant == "baseline":
        first = ["d", "x"]
        third = ["d", "m", "x"]
    elif variant == "z2linked":
        first = ["d", "z2", "x"]
        third = ["d", "m", "x"]
    elif variant == "posttreatment":
        first = ["d", "x"]
        third = ["d", "m", "x", "w"]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return [("y", first, "z1"), ("m", first, "z1"), ("y", third, "z2")]


class DesignMatrix:
    """Globally centred joint matrix with named column groups."""

    def __init__(self, data: Dataset, roles=("y", "d", "m", "z1", "z2", "x", "w")):
        cols, self.index = [], {}
        pos = 0
        for r in roles:
            v = getattr(data, r)
            if v is None:
                continue
            v = v[:, None] if v.ndim == 1 else v
            self.index[r] = list(range(pos, pos + v.shape[1]))
            pos += v.shape[1]
            cols.append(v)
        A = np.hstack(cols)
        self.mean = A.mean(axis=0)
        self.A = A - self.mean

    def cols(self, roles) -> list:
        out = []
        for r in roles:
            if r not in self.index:
                raise DataError(f"regression needs the {r} block, which is absent")
            out += self.index[r]
        return out


def _arm_of(d: np.ndarray) -> np.ndarray:
    vals = np.unique(d)
    if vals.size == 2:
        return (d == vals[1]).astype(np.int64)
    return np.zeros(d.size, dtype=np.int64)


class CrossFitter:
    """Outer-fold cross-fitting of lasso regressions from one moment table.

    Blocks are keyed by (outer fold, inner CV fold, treatment arm). Targets
    may be columns of the design or arbitrary vectors (nested regressions).
    """

    def __init__(self, dm: DesignMatrix, outer: FoldAssignment, inner: FoldAssignment, arm: np.ndarray):
        self.dm = dm
        self.k = outer.k
        self.n_inner = inner.k
        self.outer0 = outer.fold_of - 1
        block = (self.outer0 * inner.k + (inner.fold_of - 1)) * 2 + arm
        nb = outer.k * inner.k * 2
        self.mt = MomentTable(dm.A, block, nb)
        b = np.arange(nb)
        self.b_outer = b // 2 // inner.k
        self.b_inner = b // 2 % inner.k
        self.b_arm = b % 2
        self.arm = arm

    def fit(self, feats, target, k: int, arm=None):
        """CV lasso on the complement of outer fold ``k`` (0-based), optionally one arm only.

        Returns ``(intercept, coefs)`` on the centred design; add the
        target's mean yourself when ``target`` is a design column.
        """
        mom = self.mt.regression(feats, target)
        train = self.b_outer != k
        if arm is not None:
            train = train & (self.b_arm == arm)
        a, b, _ = cv_fit(mom, train, self.b_inner, self.n_inner)
        return a, b

    def predict(self, feats, target, fit_arm=None, stratify=False,
                lambdas=None, key=None):
        """Out-of-fold predictions for every row.

        ``fit_arm`` restricts training to one treatment arm. With ``stratify``
        a separate model is fitted per arm and each row is predicted by its
        own arm's model (the caller drops the treatment column from ``feats``).
        """
        mom = self.mt.regression(feats, target)
        A = self.dm.A[:, feats]
        out = np.empty(A.shape[0])
        arms = (0, 1) if stratify else (fit_arm,)
        for k in range(self.k):
            for arm in arms:
                train = self.b_outer != k
                if arm is not None:
                    train = train & (self.b_arm == arm)
                a, b, lam = cv_fit(mom, train, self.b_inner, self.n_inner)
                if lambdas is not None and key is not None:
                    lambdas.setdefault(key, []).append(lam)
                rows = self.outer0 == k
                if stratify:
                    rows = rows & (self.arm == arm)
                out[rows] = a + A[rows] @ b
        if np.ndim(target) == 0:
            out += self.dm.mean[int(target)]
        return out

    def arm_sizes_ok(self, min_arm: int = MIN_ARM) -> bool:
        for k in range(self.k):
            for arm in (0, 1):
                sel = (self.b_outer != k) & (self.b_arm == arm)
                if self.mt.cnt[sel].sum() < min_arm:
                    return False
        return True


def crossfit_means(data: Dataset, setup, k: int | None = None, seed: int = 0,
                   stratify_d: bool = False) -> CrossfitPredictions:
    """Cross-fitted η1 (without instrument) and η2 (with instrument) for the three components."""
    variant = setup if isinstance(setup, str) else setup.variant
    if k is None:
        k = getattr(setup, "folds", 2)
    if variant == "posttreatment" and data.w is None:
        raise DataError("posttreatment setup requires a W block")
    if data.n / k < 20:
        warnings.warn(f"only {data.n / k:.1f} observations per fold", RuntimeWarning, stacklevel=2)
    outer = make_folds(data.n, k, seed, 1)
    n_inner = min(INNER_FOLDS, max(2, data.n - data.n // k))
    inner = make_folds(data.n, n_inner, seed, 2)
    arm = _arm_of(data.d)
    dm = DesignMatrix(data)
    cf = CrossFitter(dm, outer, inner, arm)
    strat = stratify_d and arm.any() and cf.arm_sizes_ok()
    eta1 = np.empty((data.n, 3))
    eta2 = np.empty((data.n, 3))
    lambdas = {}
    for j, (tgt, base, inst) in enumerate(regression_specs(variant)):
        base_roles = [r for r in base if not (strat and r == "d")]
        t = dm.index[tgt][0]
        f1 = dm.cols(base_roles)
        f2 = dm.cols(base_roles + [inst])
        eta1[:, j] = cf.predict(f1, t, stratify=strat, lambdas=lambdas, key=f"eta1_{j + 1}")
        eta2[:, j] = cf.predict(f2, t, stratify=strat, lambdas=lambdas, key=f"eta2_{j + 1}")
    return CrossfitPredictions(eta1, eta2, variant, outer, lambdas)
