"""TOML run configurations: schema validation, construction of specs and the run pipeline."""
from __future__ import annotations

import copy
import json
import os
import sys
from dataclasses import replace
from importlib import resources
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cascade import CascadeSpec, auto_cascade_grid, run_cascade, stage_report
from .core import (ConfigurationError, DEFAULT_DT, PumpSpec, StageSpec, TimeGrid, make_grid,
                   stage_grid)
from .greenfn import build_transfer_matrix
from .propagator import auto_steps
from .schmidt import export_modes_csv
from .tuner import (BracketError, maximize_single_selectivity, optimize_prechirp, scan_theta,
                    tune_cascade, tune_gamma_half_ce, convergence_study)

NUM = (int, float)

PUMP_KEYS = {"width": NUM, "center": NUM, "chirp": list, "phase_offset": NUM, "file": str}
STAGE_KEYS = {"gamma": NUM + (str,), "delta_f": int, "length": NUM, "n_z_steps": (int, str),
              "auto_steps": bool, "channels": dict, "pump_p": dict, "pump_q": dict}
SCHEMA = {
    "grid": {"dt": NUM, "n_samples": (int, str), "t_start": NUM + (str,)},
    "stage1": STAGE_KEYS,
    "cascade": {"mode": str, "theta": NUM + (str,), "gamma2": NUM + (str,), "delays": dict,
                "stage2_chirp_p": list, "stage2_chirp_q": list, "optimize_prechirp": bool,
                "prechirp_max_evals": int, "prechirp_bounds": list, "prechirp_orders": list},
    "tune": {"gamma_max": NUM, "objective": str, "gamma_range": list, "k_points": int,
             "expand": int},
    "output": {"directory": str, "report": str, "modes": int, "matrix": str, "history": str},
}
REQUIRED_CHANNELS = ("p", "r", "s")


def _num(x):
    return isinstance(x, NUM) and not isinstance(x, bool)


def _check_type(path, value, types):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigurationError(f"{path} has the wrong type (got a boolean)")
    if not isinstance(value, types):
        raise ConfigurationError(f"{path} has the wrong type ({type(value).__name__})")


def validate(raw: dict) -> dict:
    """Reject unknown keys and wrong types; error messages name the offending key."""
    if not isinstance(raw, dict):
        raise ConfigurationError("configuration must be a table")
    for sec in raw:
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown section {sec!r}")
    if "stage1" not in raw:
        raise ConfigurationError("missing section stage1")
    for sec, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigurationError(f"{sec} must be a table")
        for key, val in body.items():
            path = f"{sec}.{key}"
            if key not in SCHEMA[sec]:
                raise ConfigurationError(f"unknown key {path}")
            _check_type(path, val, SCHEMA[sec][key])
    st = raw["stage1"]
    for key in ("gamma", "delta_f", "channels", "pump_p"):
        if key not in st:
            raise ConfigurationError(f"missing key stage1.{key}")
    if st["delta_f"] not in (0, 1):
        raise ConfigurationError("stage1.delta_f must be 0 or 1")
    if isinstance(st["gamma"], str) and st["gamma"] != "tune":
        raise ConfigurationError("stage1.gamma must be a number or 'tune'")
    if isinstance(st.get("n_z_steps"), str) and st["n_z_steps"] != "auto":
        raise ConfigurationError("stage1.n_z_steps must be an integer or 'auto'")
    ch = st["channels"]
    need = REQUIRED_CHANNELS + (("q",) if st["delta_f"] == 1 else ())
    for c in ch:
        if c not in ("p", "q", "r", "s"):
            raise ConfigurationError(f"unknown key stage1.channels.{c}")
        if not _num(ch[c]):
            raise ConfigurationError(f"stage1.channels.{c} must be a number")
    for c in need:
        if c not in ch:
            raise ConfigurationError(f"missing group slowness stage1.channels.{c}")
    for pump in ("pump_p", "pump_q"):
        if pump not in st:
            continue
        for key, val in st[pump].items():
            path = f"stage1.{pump}.{key}"
            if key not in PUMP_KEYS:
                raise ConfigurationError(f"unknown key {path}")
            _check_type(path, val, PUMP_KEYS[key])
        chirp = st[pump].get("chirp", [])
        if len(chirp) > 4 or not all(_num(c) for c in chirp):
            raise ConfigurationError(f"stage1.{pump}.chirp must list up to 4 numbers")
    if st["delta_f"] == 1 and "pump_q" not in st:
        raise ConfigurationError("missing section stage1.pump_q (four-wave mixing needs two pumps)")
    if st["delta_f"] == 0 and "pump_q" in st:
        raise ConfigurationError("stage1.pump_q is not used when stage1.delta_f = 0")
    cas = raw.get("cascade")
    if cas is not None:
        if str(cas.get("mode", "RC")).upper() not in ("RC", "DC"):
            raise ConfigurationError("cascade.mode must be RC or DC")
        for key in ("theta",):
            if isinstance(cas.get(key), str) and cas[key] != "scan":
                raise ConfigurationError(f"cascade.{key} must be a number or 'scan'")
        if isinstance(cas.get("gamma2"), str) and cas["gamma2"] not in ("tune", "same"):
            raise ConfigurationError("cascade.gamma2 must be a number, 'tune' or 'same'")
        for c, v in cas.get("delays", {}).items():
            if c not in ("p", "q", "r", "s") or not _num(v):
                raise ConfigurationError(f"cascade.delays.{c} must be a number for a known channel")
    tune = raw.get("tune", {})
    if tune.get("objective", "half_ce") not in ("half_ce", "max_selectivity"):
        raise ConfigurationError("tune.objective must be 'half_ce' or 'max_selectivity'")
    g = raw.get("grid", {})
    if "dt" in g and not g["dt"] > 0:
        raise ConfigurationError("grid.dt must be positive")
    return raw


def load(path) -> dict:
    """Read a config file, or a shipped config by name."""
    if not os.path.exists(path):
        name = os.path.basename(path)
        name = name if name.endswith(".toml") else name + ".toml"
        ref = resources.files("tmi") / "configs" / name
        if not ref.is_file():
            raise ConfigurationError(f"config {path!r} not found")
        text = ref.read_text()
    else:
        with open(path, "rb") as fh:
            text = fh.read().decode()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}")
    return validate(raw)


def shipped_configs():
    return sorted(p.name[:-5] for p in (resources.files("tmi") / "configs").iterdir()
                  if p.name.endswith(".toml"))


def set_key(raw: dict, dotted: str, value) -> dict:
    """Copy of raw with a dotted key replaced; the key must already hold a number."""
    out = copy.deepcopy(raw)
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigurationError(f"sweep axis {dotted} does not exist in the config")
        node = node[p]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node or not _num(node[leaf]):
        raise ConfigurationError(f"sweep axis {dotted} must name a numeric config key")
    node[leaf] = value
    return validate(out)


def _pump(body: dict, path: str) -> PumpSpec:
    kw = {k: float(body[k]) for k in ("width", "center", "phase_offset") if k in body}
    if "chirp" in body:
        kw["chirp"] = tuple(float(c) for c in body["chirp"])
    if "file" in body:
        try:
            data = np.loadtxt(body["file"], delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigurationError(f"{path}.file: {exc}")
        t = data[:, 0]
        dt = float(np.mean(np.diff(t)))
        kw["table_grid"] = TimeGrid(len(t), dt, float(t[0]))
        kw["amplitude"] = data[:, 1]
        if data.shape[1] > 2:
            kw["phase"] = data[:, 2]
    try:
        return PumpSpec(**kw)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}")


def build_stage(raw: dict, gamma_default: float = 1.0) -> StageSpec:
    st = raw["stage1"]
    g = raw.get("grid", {})
    dt = float(g.get("dt", DEFAULT_DT))
    gamma = gamma_default if st["gamma"] == "tune" else float(st["gamma"])
    n_z = st.get("n_z_steps", "auto")
    try:
        stage = StageSpec(grid=make_grid(2, dt), gamma=gamma, delta_f=st["delta_f"],
                          channels={c: float(v) for c, v in st["channels"].items()},
                          pump_p=_pump(st["pump_p"], "stage1.pump_p"),
                          pump_q=_pump(st["pump_q"], "stage1.pump_q") if "pump_q" in st else None,
                          length=float(st.get("length", 1.0)),
                          n_z_steps=None if n_z == "auto" else int(n_z))
    except ConfigurationError as exc:
        raise ConfigurationError(f"stage1: {exc}")
    return stage


def _grid_for(raw, stages_fn):
    g = raw.get("grid", {})
    dt = float(g.get("dt", DEFAULT_DT))
    n = g.get("n_samples", "auto")
    t0 = g.get("t_start", "auto")
    auto = stages_fn(dt)
    if n == "auto" and t0 == "auto":
        return auto
    n = auto.n_samples if n == "auto" else int(n)
    t0 = auto.t_start if t0 == "auto" else float(t0)
    try:
        return make_grid(n, dt, t0)
    except ConfigurationError as exc:
        raise ConfigurationError(f"grid: {exc}")


def build_cascade(raw: dict, stage: StageSpec) -> CascadeSpec:
    cas = raw["cascade"]
    g2 = cas.get("gamma2", "same")
    kw = dict(stage1=stage, mode=cas.get("mode", "RC"),
              theta=0.0 if cas.get("theta", "scan") == "scan" else float(cas["theta"]),
              gamma2=None if isinstance(g2, str) else float(g2))
    if "delays" in cas:
        kw["dc_delays"] = {k: float(v) for k, v in cas["delays"].items()}
    if "stage2_chirp_p" in cas:
        kw["stage2_chirp_p"] = tuple(float(c) for c in cas["stage2_chirp_p"])
    if "stage2_chirp_q" in cas:
        kw["stage2_chirp_q"] = tuple(float(c) for c in cas["stage2_chirp_q"])
    try:
        return CascadeSpec(**kw)
    except ConfigurationError as exc:
        raise ConfigurationError(f"cascade: {exc}")


def build(raw: dict):
    """Spec described by a validated config: ('stage', StageSpec) or ('cascade', CascadeSpec)."""
    tune = raw.get("tune", {})
    gmax = float(tune.get("gamma_max", 1.0))
    stage = build_stage(raw, gmax)
    if "cascade" in raw:
        spec = build_cascade(raw, stage)
        grid = _grid_for(raw, lambda dt: auto_cascade_grid(spec, dt).stage1.grid)
        spec = spec.with_grid(grid)
        if raw["stage1"].get("auto_steps"):
            spec = replace(spec, stage1=replace(spec.stage1, n_z_steps=auto_steps(spec.stage1)))
        return "cascade", spec
    grid = _grid_for(raw, lambda dt: stage_grid([stage], dt))
    stage = stage.with_grid(grid)
    if raw["stage1"].get("auto_steps"):
        stage = replace(stage, n_z_steps=auto_steps(stage))
    return "stage", stage


def _tune_stage(raw, stage):
    tune = raw.get("tune", {})
    if raw["stage1"]["gamma"] != "tune":
        return stage, None
    try:
        if tune.get("objective", "half_ce") == "max_selectivity":
            lo, hi = tune.get("gamma_range", [0.5, 30.0])
            res = maximize_single_selectivity(stage, (float(lo), float(hi)))
        else:
            res = tune_gamma_half_ce(stage, float(tune.get("gamma_max", stage.gamma)),
                                     expand=int(tune.get("expand", 3)))
    except BracketError as exc:
        raise ConfigurationError(f"stage1.gamma: {exc} (check tune.gamma_max)")
    return stage.with_gamma(res.value), res


def _tune_cascade(raw, spec):
    tune = raw.get("tune", {})
    cas = raw["cascade"]
    k = int(tune.get("k_points", 32))
    info = {}
    if cas.get("optimize_prechirp"):
        if raw["stage1"]["gamma"] == "tune":
            tc = tune_cascade(spec, float(tune.get("gamma_max", spec.stage1.gamma)), k,
                              expand=int(tune.get("expand", 3)))
            spec = tc.spec
        bounds = cas.get("prechirp_bounds")
        res = optimize_prechirp(spec, coeff_bounds=[tuple(b) for b in bounds] if bounds else None,
                                orders=tuple(cas.get("prechirp_orders", [1, 2, 3, 4])),
                                max_evals=int(cas.get("prechirp_max_evals", 40)),
                                k_points=max(8, k // 2))
        info["prechirp"] = {"initial_S": res.extra["initial_objective"], "S": res.objective,
                            "warning": res.warning, "chirps": [list(map(float, c)) for c in res.extra["chirps"]],
                            "flatness_initial": res.extra["flatness_initial"],
                            "flatness_final": res.extra["flatness_final"]}
        return res.extra["spec"], info, res
    if raw["stage1"]["gamma"] == "tune":
        try:
            tc = tune_cascade(spec, float(tune.get("gamma_max", spec.stage1.gamma)), k,
                              expand=int(tune.get("expand", 3)))
        except BracketError as exc:
            raise ConfigurationError(f"stage1.gamma: {exc} (check tune.gamma_max)")
        spec = tc.spec
        info["visibility"] = tc.curve.visibility
        info["ce_max"] = tc.curve.ce_star
        if cas.get("theta", "scan") != "scan":
            spec = spec.with_theta(float(cas["theta"]))
    elif cas.get("theta", "scan") == "scan":
        theta, curve = scan_theta(spec, k)
        spec = spec.with_theta(theta)
        info["visibility"] = curve.visibility
        info["ce_max"] = curve.ce_star
    return spec, info, None


def execute(raw: dict, out_dir: Optional[str] = None, write: bool = True) -> dict:
    """Run the pipeline described by a validated config; returns the report."""
    kind, spec = build(raw)
    out = raw.get("output", {})
    out_dir = out_dir or out.get("directory", "tmi_out")
    n_modes = int(out.get("modes", 3))
    if kind == "stage":
        stage, tres = _tune_stage(raw, spec)
        T, sd, report = stage_report(stage)
        report["ce_max"] = sd.ce1
    else:
        spec, info, tres = _tune_cascade(raw, spec)
        res = run_cascade(spec)
        T, sd, report = res.transfer, res.schmidt, dict(res.report)
        report.update(info)
        report.setdefault("ce_max", sd.ce1)
    if write:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, out.get("report", "report.json")), "w") as fh:
            json.dump(report, fh, indent=2)
        if n_modes > 0:
            export_modes_csv(sd, out_dir, n_modes)
        if out.get("matrix"):
            T.save(os.path.join(out_dir, out["matrix"]))
        if tres is not None and out.get("history"):
            tres.write_history(os.path.join(out_dir, out["history"]))
    return report


def transfer_for(raw: dict):
    """Transfer matrix described by a config (composite for cascades), after any tuning."""
    kind, spec = build(raw)
    if kind == "stage":
        stage, _ = _tune_stage(raw, spec)
        return build_transfer_matrix(stage)
    spec, _, _ = _tune_cascade(raw, spec)
    return run_cascade(spec, with_defects=False).transfer


def converge(raw: dict) -> dict:
    kind, spec = build(raw)
    if kind != "cascade":
        raise ConfigurationError("converge needs a [cascade] section")
    if raw["stage1"]["gamma"] == "tune":
        spec, _, _ = _tune_cascade(raw, spec)
    return convergence_study(spec)
