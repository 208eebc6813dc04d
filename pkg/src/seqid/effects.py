"""
Cross-fitted effect estimators: natural direct/indirect effects and the
dynamic effect of a treatment sequence.

Mediation effects use the multiply robust scores that reweight via Bayes'
rule, so the mediator density never has to be modelled: besides
``P(D=1|X)`` only ``P(D=1|M,X)``, the outcome mean and a nested regression
of the outcome mean on ``X`` are needed. All nuisances are lasso fits
(linear probability form for the propensities) on the complement folds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .ml import CrossFitter, DataError, Dataset, DesignMatrix, make_folds, INNER_FOLDS

CLIP = (0.001, 0.999)
EFFECT_NAMES = ("total", "dir1", "dir0", "indir1", "indir0")


@dataclass(frozen=True)
class TrimPolicy:
    lower: float = 0.01

    def __post_init__(self):
        if not 0 < self.lower < 0.5:
            raise ValueError("trimming threshold must lie in (0, 0.5)")

    @property
    def upper(self) -> float:
        return 1.0 - self.lower

    def keep(self, p: np.ndarray) -> np.ndarray:
        return (p >= self.lower) & (p <= self.upper)


@dataclass(frozen=True)
class EffectEstimates:
    total: float
    dir1: float
    dir0: float
    indir1: float
    indir0: float
    ses: tuple
    n_trimmed: int

    def as_record(self) -> dict:
        rec = asdict(self)
        rec["ses"] = list(self.ses)
        return rec

    def values(self) -> tuple:
        return tuple(getattr(self, k) for k in EFFECT_NAMES)


def _require_binary(v: np.ndarray, name: str):
    vals = np.unique(v)
    if vals.size < 2:
        raise DataError(f"{name} is constant; propensity is degenerate")
    if vals.size > 2 or not np.all(np.isin(vals, (0.0, 1.0))):
        raise DataError(f"{name} must be coded 0/1")


class _Nuisance:
    """Out-of-fold predictions of linear lasso fits, with counterfactual column values."""

    def __init__(self, data: Dataset, folds: int, seed: int, roles):
        self.dm = DesignMatrix(data, roles)
        self.outer = make_folds(data.n, folds, seed, 21)
        inner = make_folds(data.n, INNER_FOLDS, seed, 22)
        self.cf = CrossFitter(self.dm, self.outer, inner, data.d.astype(np.int64))
        self.k = folds
        self.rows = [self.outer.fold_of == j + 1 for j in range(folds)]

    def col(self, role) -> int:
        return self.dm.index[role][0]

    def value(self, a, b, feats, rows, fixed=None, target_col=None):
        """Prediction ``a + A b`` on ``rows`` with some columns held at raw values."""
        A = self.dm.A[rows][:, feats].copy()
        for c, v in (fixed or {}).items():
            A[:, feats.index(c)] = v - self.dm.mean[c]
        out = a + A @ b
        if target_col is not None:
            out += self.dm.mean[target_col]
        return out


def _clip(p):
    return np.clip(p, *CLIP)


def estimate_mediation(data: Dataset, trim: TrimPolicy = TrimPolicy(), folds: int = 3,
                       seed: int = 0) -> EffectEstimates:
    _require_binary(data.d, "treatment D")
    nz = _Nuisance(data, folds, seed, ("y", "d", "m", "x"))
    n = data.n
    iy, id_, im = nz.col("y"), nz.col("d"), nz.col("m")
    fx = nz.dm.cols(["x"])
    fmx = nz.dm.cols(["m", "x"])
    fdx = nz.dm.cols(["d", "x"])
    fdmx = nz.dm.cols(["d", "m", "x"])
    every = np.ones(n, bool)
    p_x = np.empty(n)
    p_mx = np.empty(n)
    mu_dx = np.empty((n, 2))
    mu_dmx = np.empty((n, 2))
    omega = np.empty((n, 2))  # omega[:, d] = E[mu(d, M, X) | D = 1 - d, X]
    for k in range(nz.k):
        rows = nz.rows[k]
        a, b = nz.cf.fit(fx, id_, k) if fx else (0.0, np.zeros(0))
        p_x[rows] = nz.value(a, b, fx, rows, target_col=id_)
        a, b = nz.cf.fit(fmx, id_, k)
        p_mx[rows] = nz.value(a, b, fmx, rows, target_col=id_)
        a, b = nz.cf.fit(fdx, iy, k)
        for d in (0, 1):
            mu_dx[rows, d] = nz.value(a, b, fdx, rows, {id_: d}, iy)
        a, b = nz.cf.fit(fdmx, iy, k)
        for d in (0, 1):
            mu_dmx[rows, d] = nz.value(a, b, fdmx, rows, {id_: d}, iy)
            # pseudo-outcome from the complement's own outcome model
            pseudo = nz.value(a, b, fdmx, every, {id_: d}, iy)
            a2, b2 = nz.cf.fit(fx, pseudo, k, arm=1 - d) if fx else (pseudo[data.d == 1 - d].mean(), np.zeros(0))
            omega[rows, d] = nz.value(a2, b2, fx, rows)
    p_x = _clip(p_x)
    p_mx = _clip(p_mx)
    keep = trim.keep(p_x) & trim.keep(p_mx)
    if not keep.any():
        raise DataError("no observations left after trimming")
    y, D = data.y[keep], data.d[keep]
    px, pmx = p_x[keep], p_mx[keep]
    mdx, mdmx, om = mu_dx[keep], mu_dmx[keep], omega[keep]
    pd_x = np.column_stack([1 - px, px])
    pd_mx = np.column_stack([1 - pmx, pmx])
    ind = np.column_stack([D == 0, D == 1]).astype(float)
    psi = {}
    for d in (0, 1):
        psi[(d, d)] = ind[:, d] * (y - mdx[:, d]) / pd_x[:, d] + mdx[:, d]
        o = 1 - d
        psi[(d, o)] = (ind[:, d] * pd_mx[:, o] / (pd_mx[:, d] * pd_x[:, o]) * (y - mdmx[:, d])
                       + ind[:, o] / pd_x[:, o] * (mdmx[:, d] - om[:, d]) + om[:, d])
    scores = {
        "total": psi[(1, 1)] - psi[(0, 0)],
        "dir1": psi[(1, 1)] - psi[(0, 1)],
        "dir0": psi[(1, 0)] - psi[(0, 0)],
        "indir1": psi[(1, 1)] - psi[(1, 0)],
        "indir0": psi[(0, 1)] - psi[(0, 0)],
    }
    m = keep.sum()
    est = {k: float(v.mean()) for k, v in scores.items()}
    ses = tuple(float(scores[k].std() / np.sqrt(m)) for k in EFFECT_NAMES)
    return EffectEstimates(*(est[k] for k in EFFECT_NAMES), ses, int(n - m))


def estimate_dynamic_ate(data: Dataset, trim: TrimPolicy = TrimPolicy(), folds: int = 3,
                         seed: int = 0) -> tuple:
    """Effect of the sequence (1,1) against (0,0) under sequential ignorability.

    Returns ``(ate, se, pval, n_trimmed)``; ``W`` enters the mediator and
    outcome models when present.
    """
    _require_binary(data.d, "treatment D")
    _require_binary(data.m, "mediator M")
    roles = ("y", "d", "m", "x") + (("w",) if data.w is not None else ())
    nz = _Nuisance(data, folds, seed, roles)
    n = data.n
    iy, id_, im = nz.col("y"), nz.col("d"), nz.col("m")
    post = ["w"] if data.w is not None else []
    fx = nz.dm.cols(["x"])
    fdxw = nz.dm.cols(["d", "x"] + post)
    fdmxw = nz.dm.cols(["d", "m", "x"] + post)
    every = np.ones(n, bool)
    p_x = np.empty(n)
    p_m = np.empty((n, 2))  # P(M=1 | D=d, X, W)
    mu = np.empty((n, 2))  # mu(d, m=d, X, W)
    nu = np.empty((n, 2))
    for k in range(nz.k):
        rows = nz.rows[k]
        a, b = nz.cf.fit(fx, id_, k) if fx else (0.0, np.zeros(0))
        p_x[rows] = nz.value(a, b, fx, rows, target_col=id_)
        a, b = nz.cf.fit(fdxw, im, k)
        for d in (0, 1):
            p_m[rows, d] = nz.value(a, b, fdxw, rows, {id_: d}, im)
        a, b = nz.cf.fit(fdmxw, iy, k)
        for d in (0, 1):
            mu[rows, d] = nz.value(a, b, fdmxw, rows, {id_: d, im: d}, iy)
            pseudo = nz.value(a, b, fdmxw, every, {id_: d, im: d}, iy)
            a2, b2 = nz.cf.fit(fx, pseudo, k, arm=d) if fx else (pseudo[data.d == d].mean(), np.zeros(0))
            nu[rows, d] = nz.value(a2, b2, fx, rows)
    p_x = _clip(p_x)
    p_m = _clip(p_m)
    prob11 = p_x * p_m[:, 1]
    prob00 = (1 - p_x) * (1 - p_m[:, 0])
    keep = trim.keep(prob11) & trim.keep(prob00)
    if not keep.any():
        raise DataError("no observations left after trimming")
    y, D, M = data.y[keep], data.d[keep], data.m[keep]
    psi = []
    for d, pd, pm in ((1, p_x[keep], p_m[keep, 1]), (0, 1 - p_x[keep], 1 - p_m[keep, 0])):
        hit_d = (D == d).astype(float)
        hit_m = (M == d).astype(float)
        mk, nk = mu[keep, d], nu[keep, d]
        psi.append(hit_d * hit_m * (y - mk) / (pd * pm) + hit_d * (mk - nk) / pd + nk)
    score = psi[0] - psi[1]
    m = keep.sum()
    ate = float(score.mean())
    se = float(score.std() / np.sqrt(m))
    pval = float(2 * stats.norm.sf(abs(ate / se))) if se > 0 else 1.0
    return ate, se, pval, int(n - m)
