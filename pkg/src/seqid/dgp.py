"""
Simulation designs with a binary treatment, a continuous mediator and two instruments.

Design 1 draws independent instruments; design 2 links them through
``Z2 = U4 + 0.5·Z1``. ``delta`` scales the unobserved confounder ``U1`` of
treatment, mediator and outcome; ``gamma`` scales direct effects of both
instruments on the outcome. Both parameters at zero give a model in which
all testable implications hold and the true effects are total 1.25,
direct 1 and indirect 0.25.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz

from ._rng import make_rng
from .ml import Dataset

TRUE_EFFECTS = {"total": 1.25, "dir1": 1.0, "dir0": 1.0, "indir1": 0.25, "indir0": 0.25}
# E[Y(1,1) - Y(0,0)] when the mediator is binary
TRUE_DYNAMIC_ATE = 1.5


@dataclass(frozen=True)
class DgpConfig:
    n: int = 1000
    p: int = 200
    delta: float = 0.0
    gamma: float = 0.0
    design: int = 1
    seed: int = 0
    stream: int = 0
    binary_mediator: bool = False

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be at least 1")
        if self.design not in (1, 2):
            raise ValueError("design must be 1 or 2")


@lru_cache(maxsize=8)
def _chol(p: int) -> np.ndarray:
    return np.linalg.cholesky(toeplitz(0.5 ** np.arange(p)))


def coefficients(p: int) -> np.ndarray:
    return 0.5 / np.arange(1, p + 1) ** 2


def simulate(config: DgpConfig) -> Dataset:
    rng = make_rng(config.seed, 0, config.stream)
    n, p = config.n, config.p
    x = rng.standard_normal((n, p)) @ _chol(p).T
    z1, z2, u1, u2, u3, u4 = rng.standard_normal((6, n))
    if config.design == 2:
        z2 = u4 + 0.5 * z1
    xb = x @ coefficients(p)
    delta, gamma = config.delta, config.gamma
    d = (xb + 0.5 * z1 + u1 > 0).astype(float)
    m = 0.5 * d + 0.5 * z2 + xb + delta * u1 + u2
    if config.binary_mediator:
        m = (m > 0).astype(float)
    y = d + 0.5 * m + xb + gamma * z1 + gamma * z2 + delta * u1 + u3
    return Dataset(y=y, d=d, m=m, z1=z1, z2=z2, x=x)


def null_conditional_means(data: Dataset, design: int = 1) -> np.ndarray:
    """True ``(μ_Y(D,X), μ_M(D,X), μ_Y(D,M,X))`` of design 1 when delta = gamma = 0.

    The instrument-augmented means coincide with these under the null, so the
    same matrix serves as both η1 and η2.
    """
    if design != 1:
        raise ValueError("closed forms are only available for design 1")
    xb = data.x @ coefficients(data.p)
    return np.column_stack([1.25 * data.d + 1.5 * xb, 0.5 * data.d + xb, data.d + 0.5 * data.m + xb])


def dump_csv(data: Dataset, path) -> None:
    """Write ``y,d,m,z1,z2,x1..xp`` (multi-column instruments get numbered suffixes)."""
    names = ["y", "d", "m"]
    cols = [data.y, data.d, data.m]
    for role in ("z1", "z2"):
        block = getattr(data, role)
        names += [role] if block.shape[1] == 1 else [f"{role}_{j + 1}" for j in range(block.shape[1])]
        cols += list(block.T)
    names += [f"x{j + 1}" for j in range(data.p)]
    cols += list(data.x.T)
    if data.w is not None:
        names += [f"w{j + 1}" for j in range(data.w.shape[1])]
        cols += list(data.w.T)
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names),
               comments="", fmt="%.17g")
