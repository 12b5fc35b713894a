"""CLI and experiment persistence.

Commands:
  mimpde run <config-file>            train one catalogued configuration
  mimpde verify                       run the no-training property suite
  mimpde table <id> [--budget B]      reproduce one published table
  mimpde list                         show experiments, rows, and table ids

Config files are line-oriented `key=value` text (blank lines and `#` comments
ignored).  Required keys: experiment, method.  Row selectors d, n, m,
activation default to the first catalogued row; every other key overrides the
budget defaults (interior, boundary, epochs, lambda, lr, seed, eval_interval,
eval_count, target_error, resample, out, budget).

A run writes three files beside the output stem: `<stem>.csv` (the training
curve, `epoch,loss,rel_l2` at 17 significant digits), `<stem>.record`
(line-oriented key=value run record), and `<stem>.params.npy` (the final
parameter vector).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from . import catalog as cat
from . import verification
from .optimizer import train

RECORD_SCHEMA = "mimpde-record-v1"

_ROW_KEYS = ("d", "n", "m", "activation")
_OVERRIDE_KEYS = (
    "interior",
    "boundary",
    "epochs",
    "lambda",
    "lr",
    "seed",
    "eval_interval",
    "eval_count",
    "target_error",
    "resample",
    "out",
)


class HarnessError(Exception):
    pass


def parse_config_text(text):
    """key=value lines -> dict; unknown keys and bad syntax are rejected."""
    data = {}
    known = {"experiment", "method", "budget", *_ROW_KEYS, *_OVERRIDE_KEYS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise HarnessError(f"line {lineno}: expected key=value, got '{raw.strip()}'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise HarnessError(f"line {lineno}: unknown key '{key}' (valid: {sorted(known)})")
        if key in data:
            raise HarnessError(f"line {lineno}: duplicate key '{key}'")
        data[key] = val
    return data


def config_from_mapping(data):
    """Build a validated RunConfig from parsed key=value data."""
    data = dict(data)
    try:
        experiment = data.pop("experiment")
        method = data.pop("method")
    except KeyError as e:
        raise HarnessError(f"missing required config key '{e.args[0]}'") from None
    budget = data.pop("budget", "desk")
    row_sel = {}
    for key in _ROW_KEYS:
        if key in data:
            row_sel[key] = str(data.pop(key)) if key == "activation" else _to_int(key, data.pop(key))
    try:
        cfg = cat.default_config(experiment, method, budget=budget, **row_sel)
    except cat.CatalogError as e:
        raise HarnessError(str(e)) from None
    for key, val in data.items():
        if key == "lambda":
            cfg.lam = _to_float(key, val)
        elif key in ("lr", "target_error"):
            setattr(cfg, key, _to_float(key, val))
        elif key == "resample":
            cfg.resample = cat._parse_bool(val)
        elif key == "out":
            cfg.out = str(val)
        else:
            setattr(cfg, key, _to_int(key, val))
    try:
        cat.validate_config(cfg)
    except cat.CatalogError as e:
        raise HarnessError(str(e)) from None
    return cfg


def _to_int(key, val):
    try:
        return int(str(val).strip())
    except ValueError:
        raise HarnessError(f"field '{key}': expected an integer, got '{val}'") from None


def _to_float(key, val):
    try:
        return float(str(val).strip())
    except ValueError:
        raise HarnessError(f"field '{key}': expected a number, got '{val}'") from None


def default_stem(cfg):
    return os.path.join("runs", f"{cfg.experiment}-{cfg.method}-d{cfg.d}-seed{cfg.seed}")


def write_curve(path, rows):
    with open(path, "w") as fh:
        fh.write("epoch,loss,rel_l2\n")
        for epoch, loss, err in rows:
            fh.write(f"{epoch},{loss:.17g},{err:.17g}\n")


def read_curve(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "epoch,loss,rel_l2":
            raise HarnessError(f"{path}: unexpected curve header '{header}'")
        for line in fh:
            e, l, r = line.strip().split(",")
            rows.append((int(e), float(l), float(r)))
    return rows


def write_record(path, record, curve_path, params_path):
    lines = [f"schema={RECORD_SCHEMA}", f"status={record.status}"]
    for key, val in record.config.items():
        lines.append(f"{key}={val}")
    lines += [
        f"final_rel_l2={record.final_error:.17g}",
        f"epochs_run={record.epochs_run}",
        f"stopped_early={str(record.stopped_early).lower()}",
        f"wall_clock_seconds={record.wall_seconds:.3f}",
        f"version={record.version}",
        f"param_count={record.theta.size}",
        f"curve_file={os.path.basename(curve_path)}",
        f"params_file={os.path.basename(params_path)}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_record(path):
    data = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, val = line.split("=", 1)
            data[key] = val
    if data.get("schema") != RECORD_SCHEMA:
        raise HarnessError(f"{path}: unknown record schema '{data.get('schema')}'")
    return data


def run_config(cfg, stem=None, echo=print):
    """Train one configuration and persist curve, record, and parameters.

    Returns (record, paths).  The record and partial curve are written even
    when the run diverges.
    """
    stem = stem or cfg.out or default_stem(cfg)
    os.makedirs(os.path.dirname(stem) or ".", exist_ok=True)
    plan = cat.build_plan(cfg)
    echo(
        f"[mimpde] {cfg.experiment} {cfg.method} d={cfg.d} n={cfg.n} m={cfg.m} "
        f"{cfg.activation} interior={cfg.interior} epochs={cfg.epochs} seed={cfg.seed}"
    )
    record = train(plan)
    curve_path, record_path, params_path = (
        stem + ".csv",
        stem + ".record",
        stem + ".params.npy",
    )
    write_curve(curve_path, record.rows)
    np.save(params_path, record.theta)
    write_record(record_path, record, curve_path, params_path)
    echo(
        f"[mimpde] {record.status}: rel_l2={record.final_error:.6e} after "
        f"{record.epochs_run} epochs ({record.wall_seconds:.1f}s) -> {record_path}"
    )
    return record, (curve_path, record_path, params_path)


# ---------------------------------------------------------------------------
# tables

TABLE_ALIASES = {
    "T1": ("dirichlet-elliptic-ball",),
    "T2": ("monge-ampere",),
    "T3": ("neumann-cube",),
    "T4": ("neumann-ball",),
    "T5": ("robin-sumdiff",),
    "T6": ("mixed-slab", "mixed-complex2d"),
    "T7": ("robin-augmented",),
    "T8": ("mixed-annulus",),
    "T9": ("parabolic",),
    "T10": ("wave",),
}


def table_experiments(table_id):
    if table_id in TABLE_ALIASES:
        return TABLE_ALIASES[table_id]
    if table_id in cat.EXPERIMENTS:
        return (table_id,)
    valid = sorted(TABLE_ALIASES) + cat.experiment_ids()
    raise HarnessError(f"unknown table '{table_id}'; valid: {', '.join(valid)}")


def run_table(table_id, budget="desk", out_dir="tables", seed=0, echo=print):
    """Run (or resume) every row of a table and emit the comparison CSV.

    A row whose record file already exists with matching configuration is
    reused instead of re-run.
    """
    experiments = table_experiments(table_id)
    os.makedirs(out_dir, exist_ok=True)
    out_rows = []
    failures = 0
    for eid in experiments:
        exp = cat.EXPERIMENTS[eid]
        for row in exp.rows:
            if budget == "desk" and not row.desk:
                continue
            for method in exp.methods:
                paper = row.paper.get(method)
                if paper is None and row.paper:
                    # the published table has no entry (runs that failed to converge)
                    continue
                act = row.activation or exp.activation
                cfg = cat.default_config(
                    eid, method, d=row.d, n=row.n, m=row.m, activation=act,
                    budget=budget, seed=seed,
                )
                stem = os.path.join(
                    out_dir, f"{eid}-{method}-d{row.d}-n{row.n}-m{row.m}-{act}-seed{seed}"
                )
                eps, status = _run_or_resume(cfg, stem, echo)
                if status != "completed":
                    failures += 1
                out_rows.append(
                    (eid, row.d, row.n, row.m, act, method, eps, paper, status)
                )
    table_path = os.path.join(out_dir, f"{table_id}.csv")
    with open(table_path, "w") as fh:
        fh.write("experiment,d,n,m,activation,method,rel_l2,paper_rel_l2,status\n")
        for eid, d, n, m, act, method, eps, paper, status in out_rows:
            paper_s = "" if paper is None else f"{paper:.6g}"
            eps_s = "" if eps is None else f"{eps:.17g}"
            fh.write(f"{eid},{d},{n},{m},{act},{method},{eps_s},{paper_s},{status}\n")
    echo(f"[mimpde] table {table_id} -> {table_path} ({len(out_rows)} rows, {failures} failed)")
    return table_path, failures


def _run_or_resume(cfg, stem, echo):
    record_path = stem + ".record"
    if os.path.exists(record_path):
        data = read_record(record_path)
        if _record_matches(data, cfg):
            echo(f"[mimpde] reuse {record_path}")
            return float(data["final_rel_l2"]), data["status"]
    try:
        record, _ = run_config(cfg, stem=stem, echo=echo)
    except Exception as e:  # keep going; the table marks the failed row
        echo(f"[mimpde] row failed: {e}")
        return None, f"error: {e}"
    return record.final_error, record.status


def _record_matches(data, cfg):
    want = cat.config_to_dict(cfg)
    return all(str(data.get(k)) == str(v) for k, v in want.items())


# ---------------------------------------------------------------------------
# CLI


def _cmd_run(args):
    try:
        with open(args.config) as fh:
            data = parse_config_text(fh.read())
        cfg = config_from_mapping(data)
    except (OSError, HarnessError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        record, _ = run_config(cfg, stem=args.out or None)
    except cat.CatalogError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0 if record.status == "completed" else 1


def _cmd_verify(args):
    rows = verification.run_all()
    width = max(len(name) for name, _, _ in rows)
    failed = 0
    for name, ok, detail in rows:
        mark = "PASS" if ok else "FAIL"
        failed += 0 if ok else 1
        print(f"{mark}  {name:<{width}}  {detail}")
    print(f"[mimpde] verify: {len(rows) - failed}/{len(rows)} properties passed")
    return 0 if failed == 0 else 1


def _cmd_table(args):
    try:
        _, failures = run_table(args.table, budget=args.budget, out_dir=args.out, seed=args.seed)
    except HarnessError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0 if failures == 0 else 1


def _cmd_list(args):
    print("experiments:")
    for eid in cat.experiment_ids():
        exp = cat.EXPERIMENTS[eid]
        dims = sorted({r.d for r in exp.rows})
        desk_dims = sorted({r.d for r in exp.rows if r.desk})
        print(
            f"  {eid:<24} methods={','.join(exp.methods):<14} act={exp.activation:<5} "
            f"d={dims} (desk: {desk_dims})"
        )
    print("tables:")
    for tid, eids in TABLE_ALIASES.items():
        print(f"  {tid:<4} -> {', '.join(eids)}")
    print("  (any experiment id is also a table id; * marks rows outside the desk budget)")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mimpde",
        description="Deep mixed-residual PDE solver with exact boundary/initial conditions",
    )
    parser.add_argument("--version", action="version", version=f"mimpde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one configuration from a key=value file")
    p_run.add_argument("config", help="path to the config file")
    p_run.add_argument("--out", default="", help="output stem (overrides the config)")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the no-training property suite")
    p_verify.set_defaults(func=_cmd_verify)

    p_table = sub.add_parser("table", help="reproduce one published table")
    p_table.add_argument("table", help="table id (T1..T10 or an experiment id)")
    p_table.add_argument("--budget", choices=("desk", "paper"), default="desk")
    p_table.add_argument("--out", default="tables", help="output directory")
    p_table.add_argument("--seed", type=int, default=0)
    p_table.set_defaults(func=_cmd_table)

    p_list = sub.add_parser("list", help="list experiments and tables")
    p_list.set_defaults(func=_cmd_list)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
