"""
Monte Carlo driver for the simulation tables.

Each replication is simulated, tested and (optionally) fed to the effect
estimator, then written as one JSON line. A cell reads back whatever its
checkpoint file already holds and only runs the missing replications, so
interrupted runs resume without changing any number: replication ``r``
always uses the data stream ``r`` and the test seed derived from ``(seed, r)``.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._rng import derive_seed
from .dgp import TRUE_EFFECTS, DgpConfig, simulate
from .effects import EFFECT_NAMES, TrimPolicy, estimate_mediation
from .idtest import TestSetup, run_test

LEVEL = 0.05
TRUTH = np.array([TRUE_EFFECTS[k] for k in EFFECT_NAMES])
TABLE_CELLS = ((0.0, 0.0), (1.0, 0.0), (0.0, 0.2))


@dataclass(frozen=True)
class SimulationRow:
    design: int
    n: int
    delta: float
    gamma: float
    reps: int
    rej_rate: float
    mean_pval: float
    bias: tuple | None = None
    rmse: tuple | None = None

    def as_record(self) -> dict:
        rec = asdict(self)
        for k in ("bias", "rmse"):
            if rec[k] is not None:
                rec[k] = list(rec[k])
        return rec


def default_variant(design: int) -> str:
    return "z2linked" if design == 2 else "baseline"


def replication(design, n, delta, gamma, rep, seed, p=200, folds=2, effects=True,
                variant=None) -> dict:
    data = simulate(DgpConfig(n=n, p=p, delta=delta, gamma=gamma, design=design, seed=seed, stream=rep))
    setup = TestSetup(variant=variant or default_variant(design), folds=folds)
    res = run_test(data, setup, derive_seed(seed, rep, 1))
    rec = {"rep": rep, "seed": seed, "p": p, "folds": folds, "variant": setup.variant,
           "pval": res.pval, "theta_hat": res.theta_hat, "se": res.se, "tstat": res.tstat}
    if effects:
        est = estimate_mediation(data, TrimPolicy(), seed=derive_seed(seed, rep, 2))
        rec["effects"] = list(est.values())
        rec["n_trimmed"] = est.n_trimmed
    return rec


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


def load_records(path) -> dict:
    """Replication records keyed by index; a torn last line is ignored."""
    out = {}
    path = Path(path)
    if not path.exists():
        return out
    for line in path.read_text().splitlines():
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue
        out[int(rec["rep"])] = rec
    return out


def _drop_torn_tail(path) -> None:
    """Cut a partial last line left behind by an interrupted write."""
    path = Path(path)
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])


def run_cell(design: int, n: int, delta: float, gamma: float, reps: int, seed: int = 0,
             checkpoint=None, threads: int = 1, effects: bool = True, p: int = 200,
             folds: int = 2, variant: str | None = None, start: int = 0) -> SimulationRow:
    """Run (or resume) replications ``start..start+reps-1`` of one cell and aggregate them."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    wanted = range(start, start + reps)
    done = load_records(checkpoint) if checkpoint else {}
    # only reuse records produced under the same settings
    same = {"seed": seed, "p": p, "folds": folds, "variant": variant or default_variant(design)}
    done = {r: v for r, v in done.items() if all(v.get(k) == x for k, x in same.items())}
    if effects:
        done = {r: v for r, v in done.items() if "effects" in v}
    todo = [r for r in wanted if r not in done]

    def job(r):
        return replication(design, n, delta, gamma, r, seed, p, folds, effects, variant)

    if todo:
        fh = None
        if checkpoint:
            Path(checkpoint).parent.mkdir(parents=True, exist_ok=True)
            _drop_torn_tail(checkpoint)
            fh = open(checkpoint, "a")
        try:
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    for rec in pool.map(job, todo):
                        done[rec["rep"]] = rec
                        if fh:
                            fh.write(_dumps(rec) + "\n")
                            fh.flush()
            else:
                for r in todo:
                    rec = job(r)
                    done[r] = rec
                    if fh:
                        fh.write(_dumps(rec) + "\n")
                        fh.flush()
                        os.fsync(fh.fileno())
        finally:
            if fh:
                fh.close()
    return aggregate([done[r] for r in wanted], design, n, delta, gamma)


def aggregate(records, design, n, delta, gamma) -> SimulationRow:
    records = sorted(records, key=lambda r: r["rep"])
    pv = np.array([r["pval"] for r in records])
    bias = rmse = None
    if records and all("effects" in r for r in records):
        err = np.array([r["effects"] for r in records]) - TRUTH
        bias = tuple(float(v) for v in err.mean(axis=0))
        rmse = tuple(float(v) for v in np.sqrt((err ** 2).mean(axis=0)))
    return SimulationRow(design, n, delta, gamma, len(records), float(np.mean(pv < LEVEL)),
                         float(pv.mean()), bias, rmse)


def render_table(rows) -> str:
    """Aligned text table; biases are shown in absolute value."""
    head = ["n", "delta", "gamma", "rej.rate", "mean.pval"]
    head += [f"bias.{k}" for k in EFFECT_NAMES] + [f"rmse.{k}" for k in EFFECT_NAMES]
    body = []
    for r in rows:
        cells = [str(r.n), f"{r.delta:g}", f"{r.gamma:g}", f"{r.rej_rate:.3f}", f"{r.mean_pval:.3f}"]
        if r.bias is None:
            cells += ["-"] * 10
        else:
            cells += [f"{abs(b):.3f}" for b in r.bias] + [f"{v:.3f}" for v in r.rmse]
        body.append(cells)
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(head)] + [fmt(b) for b in body]) + "\n"


def cell_path(out_dir, design, n, delta, gamma) -> Path:
    return Path(out_dir) / f"design{design}_n{n}_delta{delta:g}_gamma{gamma:g}.jsonl"


def replicate_table(table: int, reps: int, ns=(1000, 4000), threads: int = 1, out_dir=None,
                    seed: int = 0, effects: bool = True, p: int = 200) -> list:
    """All cells of simulation table ``table`` (1 = independent, 2 = linked instruments)."""
    if table not in (1, 2):
        raise ValueError("table must be 1 or 2")
    rows = []
    for delta, gamma in TABLE_CELLS:
        for n in ns:
            ck = cell_path(out_dir, table, n, delta, gamma) if out_dir else None
            rows.append(run_cell(table, n, delta, gamma, reps, seed, ck, threads, effects, p))
    if out_dir:
        Path(out_dir, f"table{table}.txt").write_text(render_table(rows))
        Path(out_dir, f"table{table}.jsonl").write_text(
            "".join(_dumps(r.as_record()) + "\n" for r in rows))
    return rows
