"""Command-line interface: tmi run | sweep | converge | dump-matrix | configs."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import config
from .core import ConfigurationError, NumericalInstabilityError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
SWEEP_COLUMNS = ("value", "S", "rho1_sq", "rho2_sq", "ce_max", "error")


def _threads() -> int:
    raw = os.environ.get("TMI_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"TMI_THREADS must be an integer, got {raw!r}")


def _sweep_point(args):
    raw, axis, value = args
    try:
        rep = config.execute(config.set_key(raw, axis, value), write=False)
    except (ConfigurationError, NumericalInstabilityError, ArithmeticError) as exc:
        return {"value": value, "error": f"{type(exc).__name__}: {exc}"}
    rho = rep["rho_sq"] + [0.0, 0.0]
    return {"value": value, "S": rep["S"], "rho1_sq": rho[0], "rho2_sq": rho[1],
            "ce_max": rep["ce_max"], "error": ""}


def parse_values(text: str):
    items = [v for v in (t.strip() for t in text.split(",")) if v]
    if not items:
        raise ConfigurationError("--values is empty")
    try:
        return [float(v) for v in items]
    except ValueError:
        raise ConfigurationError(f"--values must be comma-separated numbers, got {text!r}")


def cmd_run(ns):
    raw = config.load(ns.config)
    out = ns.out or raw.get("output", {}).get("directory") or os.path.join(
        "tmi_out", os.path.splitext(os.path.basename(ns.config))[0])
    rep = config.execute(raw, out_dir=out)
    print(f"S = {rep['S']:.6f}  rho_1^2 = {rep['rho_sq'][0]:.6f}  report in {out}")


def cmd_sweep(ns):
    values = parse_values(ns.values)
    raw = config.load(ns.config)
    config.set_key(raw, ns.axis, values[0])
    jobs = [(raw, ns.axis, v) for v in values]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    fh = open(ns.out, "w", newline="") if ns.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, restval="")
        w.writeheader()
        w.writerows(rows)
    finally:
        if ns.out:
            fh.close()


def cmd_converge(ns):
    res = config.converge(config.load(ns.config))
    text = json.dumps(res, indent=2)
    if ns.out:
        with open(ns.out, "w") as fh:
            fh.write(text)
    print(text)


def cmd_dump(ns):
    T = config.transfer_for(config.load(ns.config))
    T.save(ns.out)
    print(f"wrote {T.n * 2}x{T.n * 2} transfer matrix to {ns.out}")


def cmd_configs(ns):
    for name in config.shipped_configs():
        print(name)


def build_parser():
    p = argparse.ArgumentParser(prog="tmi", description="Temporal-mode interferometer simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate a configuration and write the report and mode files")
    r.add_argument("config", help="TOML file or shipped config name")
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="repeat a run over values of one numeric key")
    s.add_argument("config")
    s.add_argument("--axis", required=True, help="dotted key, e.g. stage1.channels.r")
    s.add_argument("--values", required=True, help="comma-separated numbers")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep)
    c = sub.add_parser("converge", help="halve dt and double the z steps, report the change")
    c.add_argument("config")
    c.add_argument("--out", help="JSON path")
    c.set_defaults(func=cmd_converge)
    d = sub.add_parser("dump-matrix", help="write the transfer matrix in binary form")
    d.add_argument("config")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dump)
    sub.add_parser("configs", help="list shipped configs").set_defaults(func=cmd_configs)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        ns.func(ns)
    except ConfigurationError as exc:
        print(f"tmi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstabilityError as exc:
        print(f"tmi: numerical instability: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
