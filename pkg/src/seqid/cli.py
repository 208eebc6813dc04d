"""
Command-line entry point.

Every flag can also be given in a ``--config`` file of ``key = value``
lines (keys spelled like the flags, without the leading dashes); flags on
the command line win. Exit codes: 0 success, 1 data or runtime error,
2 usage error. ``verify-theorems`` exits 1 when counterexamples exist.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import theorems
from .graph import GraphError, InvalidQueryError, is_dseparated, mutilate, read_edge_list
from .ml import DataError, Dataset

ROLES = ("y", "d", "m", "z1", "z2", "x", "w")
REFERENCE_COUNTS = {"T1": {"both_sides_hold": 480, "satisfying_preconditions": (735232, 73523)}}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- ingestion

def expand_columns(spec: str, header) -> list:
    """Expand ``a,b,x1..x5`` into header names, checking each exists."""
    out = []
    for part in (p.strip() for p in spec.split(",")):
        if not part:
            continue
        m = re.fullmatch(r"([A-Za-z_][A-Za-z_.]*?)(\d+)\.\.([A-Za-z_][A-Za-z_.]*?)?(\d+)", part)
        if m:
            prefix, lo, prefix2, hi = m.group(1), int(m.group(2)), m.group(3), int(m.group(4))
            if prefix2 not in (None, prefix) or hi < lo:
                raise UsageError(f"bad column range {part!r}")
            names = [f"{prefix}{i}" for i in range(lo, hi + 1)]
        else:
            names = [part]
        for name in names:
            if name not in header:
                raise DataError(f"column {name!r} not found in header")
        out += names
    return out


def read_csv(path, mapping: dict) -> Dataset:
    """Load the role columns named in ``mapping`` (role -> column spec) from a CSV file."""
    for role in mapping:
        if role not in ROLES:
            raise UsageError(f"unknown column role {role!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, a header line is required") from None
        cols = {role: expand_columns(spec, header) for role, spec in mapping.items() if spec}
        idx = {role: [header.index(c) for c in names] for role, names in cols.items()}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for j, cell in enumerate(row):
                cell = cell.strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: field {header[j]!r} is not numeric: {cell!r}") from None
                if not np.isfinite(v):
                    raise DataError(f"{path}:{lineno}: missing value in field {header[j]!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    A = np.array(rows)
    blocks = {role: A[:, ix] for role, ix in idx.items()}
    for role in ("y", "d", "m"):
        if role in blocks:
            if blocks[role].shape[1] != 1:
                raise UsageError(f"--{role} must name exactly one column")
            blocks[role] = blocks[role][:, 0]
    missing = [r for r in ("y", "d", "m", "z1", "z2") if r not in blocks]
    if missing:
        raise UsageError(f"missing column mapping for: {', '.join(missing)}")
    return Dataset(blocks["y"], blocks["d"], blocks["m"], blocks["z1"], blocks["z2"],
                   blocks.get("x"), blocks.get("w"))


def read_records(text: str) -> list:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------- output

def _emit(rows: list, fmt: str, out=None):
    out = out or sys.stdout
    if fmt == "records":
        for r in rows:
            out.write(json.dumps(r, sort_keys=True) + "\n")
        return
    keys = list(rows[0].keys()) if rows else []
    cells = [[_fmt(r.get(k)) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    out.write("  ".join(k.rjust(w) for k, w in zip(keys, widths)) + "\n")
    for c in cells:
        out.write("  ".join(v.rjust(w) for v, w in zip(c, widths)) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.5g}"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


# ---------------------------------------------------------------- commands

def cmd_verify(args) -> int:
    names = theorems.THEOREM_ALIASES[args.theorem]
    rows, bad = [], 0
    for name in names:
        rep = theorems.verify_theorem(name, threads=args.threads,
                                      max_latents=args.max_latents if name == "T3" else None)
        rec = rep.as_record()
        rec.pop("counterexample_masks")
        rows.append(rec)
        bad += len(rep.counterexample_masks)
        print(f"{name}: {rep.elapsed:.1f}s", file=sys.stderr)
        if args.emit_counterexamples and rep.counterexample_masks:
            with open(args.emit_counterexamples, "a") as fh:
                for mask, g in zip(rep.counterexample_masks, rep.counterexamples):
                    fh.write(f"# {name} mask {mask}\n{g.to_text()}\n")
    _emit(rows, args.format)
    if args.format == "table":
        for name in names:
            ref = REFERENCE_COUNTS.get(name)
            if ref:
                a, b = ref["satisfying_preconditions"]
                print(f"reference counts for {name}: both_sides_hold {ref['both_sides_hold']}; "
                      f"satisfying_preconditions reported both as {a} and as {b} "
                      f"({a} - {ref['both_sides_hold']} = {a - ref['both_sides_hold']}, "
                      f"inconsistent with the second figure)")
    return 1 if bad else 0


def _load_graph(spec: str):
    if spec in theorems.FIXTURES:
        return theorems.load_fixture(spec)
    stem = Path(spec).stem
    if not Path(spec).exists() and stem in theorems.FIXTURES:
        return theorems.load_fixture(stem)
    if not Path(spec).exists():
        raise DataError(f"graph file not found: {spec}")
    return read_edge_list(spec)


def _split(s: str) -> list:
    return [v.strip() for v in s.split(",") if v.strip()] if s else []


def cmd_dsep(args) -> int:
    g = _load_graph(args.graph)
    cut = _split(args.cut)
    h = mutilate(g, cut)
    a, b, c = _split(args.a), _split(args.b), _split(args.given)
    sep = is_dseparated(h, a, b, c)
    if args.format == "records":
        _emit([{"a": a, "b": b, "given": c, "cut": cut, "separated": sep}], "records")
    else:
        print("d-separated" if sep else "d-connected")
    return 0


def cmd_simulate(args) -> int:
    from .dgp import DgpConfig, dump_csv, simulate
    cfg = DgpConfig(n=args.n, p=args.p, delta=args.delta, gamma=args.gamma, design=args.design,
                    seed=args.seed, binary_mediator=args.binary_mediator)
    data = simulate(cfg)
    if args.dump:
        dump_csv(data, args.dump)
    rec = {"n": data.n, "p": data.p, "design": cfg.design, "delta": cfg.delta, "gamma": cfg.gamma,
           "seed": cfg.seed, "mean_d": float(data.d.mean()), "mean_m": float(data.m.mean()),
           "mean_y": float(data.y.mean())}
    _emit([rec], args.format)
    return 0


def _data_from_args(args) -> Dataset:
    if not args.data:
        raise UsageError("--data is required")
    mapping = {r: getattr(args, r) for r in ROLES if getattr(args, r)}
    return read_csv(args.data, mapping)


def _setup_from_args(args):
    from .idtest import TestSetup
    return TestSetup(variant=args.variant, sigma_zeta=args.sigma_zeta, folds=args.folds,
                     sidedness="two-sided" if args.two_sided else "one-sided-upper",
                     stratify_d=args.stratify_d)


def cmd_test(args) -> int:
    from .idtest import median_run
    data = _data_from_args(args)
    setup = _setup_from_args(args)
    res = median_run(data, setup, args.runs, args.seed)
    rec = {"teststat": res.theta_hat, "se": res.se, "pval": res.pval, "tstat": res.tstat,
           "n": res.n, "runs": args.runs, "variant": setup.variant, "degenerate": res.degenerate}
    if args.effect:
        from .effects import TrimPolicy, estimate_dynamic_ate
        ate, se, pv, ntr = estimate_dynamic_ate(data, TrimPolicy(args.trim), args.folds, args.seed)
        rec.update(effect=ate, effect_se=se, effect_pval=pv, effect_ntrimmed=ntr)
    _emit([rec], args.format)
    return 0


def cmd_first_stage(args) -> int:
    from .idtest import first_stage_check
    data = _data_from_args(args)
    p1, p2 = first_stage_check(data, _setup_from_args(args), args.seed)
    _emit([{"pval_d_z1": p1, "pval_m_z2": p2}], args.format)
    return 0


def cmd_replicate(args) -> int:
    from .harness import render_table, replicate_table
    ns = tuple(int(v) for v in _split(args.n))
    rows = replicate_table(args.table, args.reps, ns, args.threads, args.out, args.seed,
                           effects=not args.no_effects, p=args.p)
    if args.format == "records":
        _emit([r.as_record() for r in rows], "records")
    else:
        sys.stdout.write(render_table(rows))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of 'key = value' lines mirroring the flags")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("table", "records"), default="table")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="CSV file with a header line")
    for r in ROLES:
        data.add_argument(f"--{r}", help=f"column(s) for {r}; ranges like x1..x200 allowed")
    data.add_argument("--variant", choices=("baseline", "z2linked", "posttreatment"), default="baseline")
    data.add_argument("--folds", type=int, default=10)
    data.add_argument("--sigma-zeta", type=float, default=None, help="perturbation SD (default 500/n)")
    data.add_argument("--two-sided", action="store_true")
    data.add_argument("--stratify-d", action="store_true")

    p = argparse.ArgumentParser(prog="seqid", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify-theorems", parents=[common], help="enumerate graphs and check a theorem")
    s.add_argument("--theorem", choices=sorted(theorems.THEOREM_ALIASES), required=True)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--max-latents", type=int, default=1, help="latent-confounder cap for t3")
    s.add_argument("--emit-counterexamples", metavar="PATH")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("dsep", parents=[common], help="d-separation query on an edge-list graph")
    s.add_argument("--graph", required=True, help="edge-list file or packaged fixture name")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--given", default="")
    s.add_argument("--cut", default="", help="intervened nodes whose outgoing edges are removed")
    s.set_defaults(func=cmd_dsep)

    s = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--p", type=int, default=200)
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--gamma", type=float, default=0.0)
    s.add_argument("--design", type=int, choices=(1, 2), default=1)
    s.add_argument("--binary-mediator", action="store_true")
    s.add_argument("--dump", metavar="PATH", help="write the data as CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("test", parents=[common, data], help="run the identification test on a CSV file")
    s.add_argument("--runs", type=int, default=1, help="odd number of repetitions; the median-p run is shown")
    s.add_argument("--effect", action="store_true", help="also estimate E[Y(1,1)-Y(0,0)]")
    s.add_argument("--trim", type=float, default=0.01)
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("first-stage", parents=[common, data], help="instrument relevance p-values")
    s.set_defaults(func=cmd_first_stage)

    s = sub.add_parser("replicate-table", parents=[common], help="Monte Carlo simulation table")
    s.add_argument("--table", type=int, choices=(1, 2), required=True)
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--n", default="1000,4000", help="comma-separated sample sizes")
    s.add_argument("--p", type=int, default=200)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", metavar="DIR")
    s.add_argument("--no-effects", action="store_true")
    s.set_defaults(func=cmd_replicate)
    return p


def read_config(path) -> dict:
    out = {}
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("_", "-")] = v
    return out


def _config_tokens(parser, argv) -> list:
    """Turn config-file entries into flags placed before the command-line flags."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[1:])
    cfg = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices[argv[0]]
    actions = {opt: act for act in sp._actions for opt in act.option_strings}
    anywhere = {opt for other in subparsers.choices.values() for act in other._actions
                for opt in act.option_strings}
    tokens = []
    for key, val in cfg.items():
        if f"--{key}" not in anywhere or key == "config":
            raise UsageError(f"config: unknown key {key!r}")
        act = actions.get(f"--{key}")
        if act is None:
            continue  # belongs to another command; one file can serve several
        if isinstance(act, argparse._StoreTrueAction):
            if val.lower() in ("1", "true", "yes", "on"):
                tokens.append(f"--{key}")
            elif val.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"config: {key} expects true/false, got {val!r}")
        else:
            tokens += [f"--{key}", val]
    return [argv[0]] + tokens + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] in ("verify-theorems", "dsep", "simulate", "test", "first-stage",
                                "replicate-table"):
            argv = _config_tokens(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (DataError, GraphError, InvalidQueryError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
