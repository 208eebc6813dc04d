import json

import numpy as np
import pytest

from seqid.harness import aggregate, load_records, render_table, replicate_table, run_cell


def test_single_rep(tmp_path):
    row = run_cell(1, 300, 0.0, 0.0, 1, seed=2, p=10)
    assert row.rej_rate in (0.0, 1.0)
    assert row.rmse[0] == pytest.approx(abs(row.bias[0]))


def test_resume_matches_uninterrupted(tmp_path):
    full = run_cell(1, 300, 0.0, 0.0, 4, seed=5, checkpoint=tmp_path / "a.jsonl", p=10)
    part = tmp_path / "b.jsonl"
    run_cell(1, 300, 0.0, 0.0, 2, seed=5, checkpoint=part, p=10)
    with part.open("a") as fh:
        fh.write('{"rep": 3, "pval": 0.')  # torn write from an interrupted run
    resumed = run_cell(1, 300, 0.0, 0.0, 4, seed=5, checkpoint=part, p=10)
    assert resumed == full
    recs = load_records(part)
    assert sorted(recs) == [0, 1, 2, 3]


def test_internal_consistency(tmp_path):
    ck = tmp_path / "c.jsonl"
    row = run_cell(2, 300, 0.0, 0.2, 3, seed=1, checkpoint=ck, p=10, effects=False)
    recs = list(load_records(ck).values())
    pv = np.array([r["pval"] for r in recs])
    assert row.rej_rate == np.mean(pv < 0.05)
    assert row.mean_pval == pytest.approx(pv.mean())
    assert row.bias is None


def test_rmse_at_least_abs_bias():
    recs = [{"rep": i, "pval": 0.5, "effects": list(np.random.default_rng(i).normal(1, 0.1, 5))}
            for i in range(6)]
    row = aggregate(recs, 1, 10, 0.0, 0.0)
    assert all(r >= abs(b) for r, b in zip(row.rmse, row.bias))


def test_replicate_table_small(tmp_path):
    rows = replicate_table(1, 1, ns=(200,), out_dir=tmp_path, seed=0, p=5)
    assert len(rows) == 3
    text = (tmp_path / "table1.txt").read_text()
    assert text.splitlines()[0].split()[:5] == ["n", "delta", "gamma", "rej.rate", "mean.pval"]
    recs = [json.loads(l) for l in (tmp_path / "table1.jsonl").read_text().splitlines()]
    assert [r["delta"] for r in recs] == [0.0, 1.0, 0.0]
    assert render_table(rows) == text
