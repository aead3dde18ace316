"""Run configuration: TOML file, schema validation, overrides and resolution."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import defaults
from .msk import ActivationParams, GeometryPoly, JointParams, MuscleParams
from .signal import EmgPipeline
from .sim import ExcitationSpec, SimConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


REQUIRED = object()


def _muscle_default(col):
    return lambda: [float(v) for v in defaults.wrist_muscles().as_array()[:, col]]


# section -> key -> (kind, default); callable defaults are evaluated lazily
SCHEMA = {
    "": {"seed": ("int", REQUIRED)},
    "paths": {"data": ("str", "data"), "out": ("str", "runs/default")},
    "muscles": {
        "names": ("strs", lambda: list(defaults.MUSCLE_NAMES)),
        "f_max": ("floats", _muscle_default(0)),
        "l_opt": ("floats", _muscle_default(1)),
        "l_tendon_slack": ("floats", _muscle_default(2)),
        "phi_opt": ("floats", _muscle_default(3)),
        "k_fl": ("floats", _muscle_default(4)),
        "lambda_al": ("float", 0.15),
        "v_max_factor": ("float", 10.0),
    },
    "activation": {"a_shape": ("float", -1.0)},
    "joint": {
        "inertia": ("float", lambda: defaults.wrist_joint().inertia),
        "damping": ("float", lambda: defaults.wrist_joint().damping),
        "mass": ("float", lambda: defaults.wrist_joint().mass),
        "com_length": ("float", lambda: defaults.wrist_joint().com_length),
        "gravity": ("float", 9.81),
    },
    "geometry": {
        "mtu_coeffs": ("matrix", lambda: defaults.wrist_geometry().mtu_coeffs.tolist()),
        "theta_range": ("floats", lambda: list(defaults.wrist_geometry().theta_range)),
    },
    "simulate": {
        "n_trials": ("int", 5),
        "dt": ("float", 0.001),
        "duration": ("float", 20.0),
        "stride": ("int", 1),
        "theta_0": ("float", 0.0),
        "theta_dot_0": ("float", 0.0),
        "noise_std": ("float", 0.0),
    },
    "simulate.excitation": {
        "kind": ("str", "sinusoids"),
        "n_components": ("int", 3),
        "freq_range": ("floats", [0.1, 1.0]),
        "low": ("float", 0.0),
        "high": ("float", 0.5),
        "smooth_s": ("float", 0.5),
    },
    "preprocess": {
        "band_hz": ("floats", [20.0, 450.0]),
        "band_order": ("int", 4),
        "envelope_hz": ("float", 4.0),
        "envelope_order": ("int", 4),
        "fs_out": ("float", 1000.0),
        "angle_cutoff_hz": ("float", 1.0),
        "angle_order": ("int", 2),
    },
    "model": {
        "window": ("int", 16),
        "dropout": ("float", 0.3),
        "pool_stride": ("int", 1),
        "stride": ("int", 1),
        "moment_arm_scale": ("float", 1.0),
        "init_scale_f_max": ("float", 1.0),
        "init_scale_l_opt": ("float", 1.0),
        "init_scale_l_tendon_slack": ("float", 1.0),
        "init_scale_phi_opt": ("float", 1.0),
        "init_scale_k_fl": ("float", 1.0),
    },
    "train": {
        "lr": ("float", 1e-3),
        "beta1": ("float", 0.9),
        "beta2": ("float", 0.999),
        "eps": ("float", 1e-8),
        "batch_phase1": ("int", 1),
        "batch_phase2": ("int", 32),
        "patience": ("int", 30),
        "split": ("float", 0.85),
        "phase1_tol": ("float", 1e-4),
        "phase1_window": ("int", 5),
        "phase1_max_epochs": ("int", 200),
        "phase1_zero_loss": ("float", 1e-20),
        "phase2_max_epochs": ("int", 300),
        "freeze_physics": ("bool", True),
        "normalize_residual": ("bool", True),
    },
}

# sections whose physical content must be given in full once the section appears
_ALL_OR_NOTHING = {
    "muscles": ("f_max", "l_opt", "l_tendon_slack", "phi_opt"),
    "joint": ("inertia", "damping", "mass", "com_length"),
    "geometry": ("mtu_coeffs",),
}


def _check(kind, value, where):
    def bad():
        return ConfigError(f"{where}: expected {kind}, got {type(value).__name__} {value!r}")

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad()
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad()
        return value
    if kind == "strs":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise bad()
        return list(value)
    if kind == "floats":
        if not isinstance(value, list) or not value:
            raise bad()
        return [_check("float", v, where) for v in value]
    if kind == "matrix":
        if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
            raise bad()
        return [[_check("float", v, where) for v in r] for r in value]
    raise AssertionError(kind)


def _children(sec):
    depth = len(sec.split(".")) if sec else 0
    return {s.split(".")[depth] for s in SCHEMA
            if s and s.startswith(sec + "." if sec else "") and len(s.split(".")) == depth + 1}


def _reject_unknown(node, sec=""):
    allowed = set(SCHEMA[sec]) | _children(sec)
    for key, val in node.items():
        path = f"{sec}.{key}" if sec else key
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}'")
        if path in SCHEMA:
            if not isinstance(val, dict):
                raise ConfigError(f"{path}: expected a table")
            _reject_unknown(val, path)


def _lookup(raw, sec):
    node = raw
    for part in sec.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def validate(raw):
    """Check ``raw`` against the schema and return a fully resolved copy."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a table")
    _reject_unknown(raw)
    out = {}
    for sec, keys in SCHEMA.items():
        given = raw if not sec else _lookup(raw, sec)
        present = given is not None
        given = given or {}
        need = _ALL_OR_NOTHING.get(sec, ())
        target = out
        for part in [p for p in sec.split(".") if p]:
            target = target.setdefault(part, {})
        for key, (kind, default) in keys.items():
            where = f"{sec}.{key}" if sec else key
            if key in given:
                target[key] = _check(kind, given[key], where)
            elif default is REQUIRED or (present and key in need):
                raise ConfigError(f"missing required field '{where}'")
            else:
                target[key] = default() if callable(default) else default
    given_m = _lookup(raw, "muscles")
    if given_m is not None:
        n = len(out["muscles"]["f_max"])
        if "k_fl" not in given_m:
            out["muscles"]["k_fl"] = [0.45] * n
        if "names" not in given_m:
            out["muscles"]["names"] = [f"muscle_{i + 1}" for i in range(n)]
    _cross_check(out)
    return out


def _cross_check(cfg):
    m = cfg["muscles"]
    n = len(m["f_max"])
    for key in ("l_opt", "l_tendon_slack", "phi_opt", "k_fl"):
        if len(m[key]) != n:
            raise ConfigError(f"muscles.{key}: expected {n} values, got {len(m[key])}")
    if len(m["names"]) != n:
        raise ConfigError(f"muscles.names: expected {n} names, got {len(m['names'])}")
    coeffs = cfg["geometry"]["mtu_coeffs"]
    if len(coeffs) != n or any(len(r) != 4 for r in coeffs):
        raise ConfigError(f"geometry.mtu_coeffs: expected {n} rows of 4 coefficients")
    if len(cfg["geometry"]["theta_range"]) != 2:
        raise ConfigError("geometry.theta_range: expected two values")
    if len(cfg["preprocess"]["band_hz"]) != 2:
        raise ConfigError("preprocess.band_hz: expected two values")
    if len(cfg["simulate"]["excitation"]["freq_range"]) != 2:
        raise ConfigError("simulate.excitation.freq_range: expected two values")
    try:
        build(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def parse_override(text):
    """``section.key=value`` -> ``(["section", "key"], value)``; value is TOML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    path, val = text.split("=", 1)
    parts = [p.strip() for p in path.strip().split(".")]
    if not all(parts):
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomli.loads(f"v = {val.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = val.strip()
    return parts, value


def apply_overrides(raw, overrides):
    for text in overrides or ():
        parts, value = parse_override(text)
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: '{p}' is not a section")
        node[parts[-1]] = value
    return raw


def load(path, overrides=()):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate(apply_overrides(raw, overrides))


def dump(cfg, path):
    Path(path).write_text(tomli_w.dumps(cfg))


@dataclass
class Built:
    muscles: MuscleParams
    activation: ActivationParams
    joint: JointParams
    geometry: GeometryPoly
    sim: SimConfig
    n_trials: int
    pipeline: EmgPipeline
    train: TrainConfig


def build(cfg):
    """Domain objects described by a resolved configuration."""
    m = cfg["muscles"]
    mp = MuscleParams(*(np.array(m[k]) for k in ("f_max", "l_opt", "l_tendon_slack", "phi_opt", "k_fl")),
                      lambda_al=m["lambda_al"], v_max_factor=m["v_max_factor"])
    geom = GeometryPoly(np.array(cfg["geometry"]["mtu_coeffs"]), tuple(cfg["geometry"]["theta_range"]),
                        tuple(m["names"]))
    s = dict(cfg["simulate"])
    n_trials = s.pop("n_trials")
    exc = ExcitationSpec(**dict(cfg["simulate"]["excitation"], freq_range=tuple(
        cfg["simulate"]["excitation"]["freq_range"])))
    s.pop("excitation")
    simc = SimConfig(excitation=exc, seed=cfg["seed"], **s)
    if n_trials < 1:
        raise ValueError("simulate.n_trials must be >= 1")
    p = cfg["preprocess"]
    pipe = EmgPipeline(tuple(p["band_hz"]), p["band_order"], p["envelope_hz"], p["envelope_order"],
                       p["fs_out"])
    tc = TrainConfig(seed=cfg["seed"], **cfg["train"])
    md = cfg["model"]
    if md["window"] < 1 or md["stride"] < 1 or md["pool_stride"] < 1:
        raise ValueError("model.window, model.stride and model.pool_stride must be >= 1")
    if not 0.0 <= md["dropout"] < 1.0:
        raise ValueError("model.dropout must lie in [0, 1)")
    return Built(mp, ActivationParams(cfg["activation"]["a_shape"]), JointParams(**cfg["joint"]),
                 geom, simc, n_trials, pipe, tc)


def example_path():
    return Path(__file__).with_name("data") / "example.toml"
