"""Command-line entry point: ``penn <command> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, data_io, msk, sim
from .eval import (MetricError, format_comparison, format_table, read_metrics_csv,
                   report_from_estimates, write_metrics_csv, write_trajectory_csv)
from .model import PennModel, estimate_free_running, estimate_teacher_forced
from .signal import SignalError, preprocess_emg, resample_linear, smooth_angle
from .training import (TrainingError, load_checkpoint, read_loss_csv, save_checkpoint,
                       split_indices, train_phase_one, train_phase_two, write_loss_csv)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
RESOLVED_NAME = "config.resolved.toml"


class InputError(Exception):
    pass


def _say(msg):
    print(msg, flush=True)


def _load_config(args):
    if not args.config:
        raise InputError("a configuration file is required (--config)")
    return cfgmod.load(args.config, args.set)


def _write_provenance(out, cfg, inputs):
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(cfg, out / RESOLVED_NAME)
    prov = {"version": __version__,
            "config_sha256": data_io.file_digest(out / RESOLVED_NAME),
            "inputs": inputs}
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args):
    cfg = _load_config(args)
    b = cfgmod.build(cfg)
    out = Path(args.out or cfg["paths"]["data"])
    out.mkdir(parents=True, exist_ok=True)
    trials = sim.generate_synthetic_dataset(b.sim, b.muscles, b.activation, b.geometry, b.joint,
                                            b.n_trials)
    for k, tr in enumerate(trials):
        data_io.write_trial(out / f"trial_{k:03d}.csv", tr)
    _write_provenance(out, cfg, {})
    _say(f"simulated {len(trials)} trials of {b.sim.duration:g} s at dt={b.sim.dt:g} s "
         f"(physics step {b.sim.physics_dt:g} s) -> {out}")
    return EXIT_OK


# -- preprocess -------------------------------------------------------------

def _read_mvc(path, n):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"MVC file {path} not found")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"channel", "mvc"}:
        raise InputError(f"{path}:1: header must be channel,mvc")
    table = {}
    for i, r in enumerate(rows):
        try:
            table[r["channel"].strip()] = float(r["mvc"])
        except (TypeError, ValueError):
            raise InputError(f"{path}:{i + 2}: invalid MVC value {r['mvc']!r}") from None
    missing = [f"emg_{i + 1}" for i in range(n) if f"emg_{i + 1}" not in table]
    if missing:
        raise InputError(f"{path}: missing MVC entry for {', '.join(missing)}")
    return np.array([table[f"emg_{i + 1}"] for i in range(n)])


def cmd_preprocess(args):
    cfg = cfgmod.validate(cfgmod.apply_overrides({"seed": 0}, args.set)) if not args.config \
        else _load_config(args)
    b = cfgmod.build(cfg)
    p = cfg["preprocess"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = data_io.list_trials(args.raw)
    inputs = {"mvc": data_io.file_digest(args.mvc)}
    for f in files:
        raw = data_io.read_trial(f)
        mvc = _read_mvc(args.mvc, raw.n_channels)
        emg = preprocess_emg(raw.emg, raw.fs, mvc, b.pipeline)
        if raw.fs < 2 * p["angle_cutoff_hz"] + 1e-12:
            raise SignalError(f"{f}: sampling rate too low for angle smoothing")
        ang = smooth_angle(raw.angle, raw.fs, p["angle_cutoff_hz"], p["angle_order"])
        if raw.fs != b.pipeline.fs_out:
            ang = resample_linear(ang, raw.fs, b.pipeline.fs_out)
        meta = dict(raw.meta, source=str(f.name), preprocessed=True)
        data_io.write_trial(out / f.name, sim.Trial(b.pipeline.fs_out, emg, ang, meta))
        inputs[f.name] = data_io.file_digest(f)
    _write_provenance(out, cfg, inputs)
    _say(f"preprocessed {len(files)} trials -> {out} (fs={b.pipeline.fs_out:g} Hz)")
    return EXIT_OK


# -- train ------------------------------------------------------------------

def build_model(cfg):
    """Fresh PENN model from a resolved configuration."""
    b = cfgmod.build(cfg)
    md = cfg["model"]
    P = b.muscles.as_array().copy()
    for j, name in enumerate(msk.PARAM_FIELDS):
        P[:, j] *= md[f"init_scale_{name}"]
    mp = msk.MuscleParams(*(P[:, j] for j in range(5)), lambda_al=b.muscles.lambda_al,
                          v_max_factor=b.muscles.v_max_factor)
    geom = b.geometry.scaled_moment_arms(md["moment_arm_scale"])
    return PennModel.create(mp, b.activation, geom, b.joint, md["window"], md["dropout"],
                            md["pool_stride"], cfg["seed"])


def _load_data(data_dir, stride):
    files = data_io.list_trials(data_dir)
    trials = [data_io.read_trial(f).decimate(stride) for f in files]
    for f, t in zip(files, trials):
        t.meta["name"] = f.stem
    return trials


def cmd_train(args):
    cfg = _load_config(args)
    b = cfgmod.build(cfg)
    out = Path(args.out or cfg["paths"]["out"])
    data_dir = args.data or cfg["paths"]["data"]
    stride = cfg["model"]["stride"]
    trials = _load_data(data_dir, stride)
    tc = b.train
    tr_idx, te_idx = split_indices(len(trials), tc.split, tc.seed)
    train = [trials[i] for i in tr_idx]
    test = [trials[i] for i in te_idx]
    names = [t.meta["name"] for t in trials]
    split = {"train": [names[i] for i in tr_idx], "test": [names[i] for i in te_idx]}
    extra = {"stride": stride, "split": split, "data_digest": data_io.directory_digest(data_dir)}
    p1_dir, final_dir = out / "phase1", out / "final"
    _write_provenance(out, cfg, {"data": extra["data_digest"]})

    if args.resume and (p1_dir / "manifest.json").is_file():
        model, man = load_checkpoint(p1_dir)
        if man.get("data_digest") != extra["data_digest"] or man.get("split") != split:
            raise InputError(f"{p1_dir} was trained on different data")
        p1_records = read_loss_csv(p1_dir / "losses.csv")
        _say(f"resumed phase one from {p1_dir} (epoch {man['epoch']})")
    else:
        model = build_model(cfg)
        p1 = train_phase_one(train, test, model, tc)
        p1_records = p1.records
        last = p1_records[-1]
        save_checkpoint(p1_dir, model, 1, p1.epochs, {"l_phy_test": last.l_phy},
                        dict(extra, label="Physics only"))
        write_loss_csv(p1_dir / "losses.csv", p1_records)
        _say(f"phase one: {p1.epochs} epochs ({p1.stop_reason}); "
             f"L_phy {p1_records[0].l_phy:.4g} -> {p1_records[-2].l_phy:.4g} (train)")
    p2 = train_phase_two(train, test, model, tc)
    records = p1_records + p2.records
    best = [r for r in p2.records if r.epoch == p2.best_epoch and r.split == "test"][0]
    save_checkpoint(final_dir, model, 2, p2.epochs, {"l_res_test": best.l_res},
                    dict(extra, label="PENN"))
    write_loss_csv(out / "losses.csv", records)
    _say(f"phase two: {p2.epochs} epochs ({p2.stop_reason}); best held-out L_res "
         f"{best.l_res:.4g} at epoch {p2.best_epoch} -> {final_dir}")
    return EXIT_OK


# -- estimate / evaluate ----------------------------------------------------

def _estimates(ckpt, data_dir, which):
    model, man = load_checkpoint(ckpt)
    trials = _load_data(data_dir, man.get("stride", 1))
    if which == "test":
        wanted = set(man.get("split", {}).get("test", []))
        trials = [t for t in trials if t.meta["name"] in wanted]
        if not trials:
            raise InputError(f"none of the checkpoint's test trials found in {data_dir}")
    n_in = model.n_muscles
    for t in trials:
        if t.n_channels != n_in:
            raise InputError(f"trial {t.meta['name']} has {t.n_channels} channels, "
                             f"checkpoint expects {n_in}")
    dt = 1.0 / trials[0].fs
    free = [estimate_free_running(t, model, dt) for t in trials]
    forced = [estimate_teacher_forced(t, model, dt) for t in trials]
    return model, man, trials, free, forced


def cmd_estimate(args):
    _, _, trials, free, _ = _estimates(args.checkpoint, args.data, args.trials)
    out = Path(args.out)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    for t, e in zip(trials, free):
        write_trajectory_csv(out / "trajectories" / f"{t.meta['name']}.csv", e, t.fs)
    _say(f"wrote {len(trials)} free-running trajectories -> {out / 'trajectories'}")
    return EXIT_OK


def _evaluate_one(ckpt, data_dir, which, out):
    model, man, trials, free, forced = _estimates(ckpt, data_dir, which)
    names = [t.meta["name"] for t in trials]
    prov = {"checkpoint": str(ckpt), "data_digest": data_io.directory_digest(data_dir),
            "checkpoint_digest": data_io.file_digest(Path(ckpt) / "weights.npz")}
    label = man.get("label", Path(ckpt).name)
    rep = report_from_estimates(label, names, free, "free_running", prov)
    rep_tf = report_from_estimates(label, names, forced, "teacher_forced", prov)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectories").mkdir(exist_ok=True)
    for t, e in zip(trials, free):
        write_trajectory_csv(out / "trajectories" / f"{t.meta['name']}.csv", e, t.fs)
    write_metrics_csv(out / "metrics.csv", rep)
    write_metrics_csv(out / "metrics_teacher_forced.csv", rep_tf)
    return rep, rep_tf, prov


def cmd_evaluate(args):
    out = Path(args.out)
    rep, rep_tf, prov = _evaluate_one(args.checkpoint, args.data, args.trials, out)
    blocks = ["Free-running estimates (headline)", format_table([rep])]
    if args.compare:
        other, other_tf, _ = _evaluate_one(args.compare, args.data, args.trials, out / "compare")
        if other.method == rep.method:
            other.method = f"{other.method} ({Path(args.compare).name})"
        blocks = ["Free-running estimates (headline)", format_table([rep, other]), "",
                  format_comparison(rep, other)]
    blocks += ["", "Teacher-forced one-step estimates", format_table([rep_tf])]
    text = "\n".join(blocks) + "\n"
    (out / "report.txt").write_text(text)
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    _say(text.rstrip())
    return EXIT_OK


def cmd_report(args):
    reps = []
    for d in args.runs:
        path = Path(d) / "metrics.csv"
        if not path.is_file():
            raise InputError(f"no metrics.csv in {d}")
        reps.append(read_metrics_csv(path, Path(d).name))
    text = format_table(reps)
    if len(reps) == 2:
        text += "\n\n" + format_comparison(*reps)
    _say(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="penn", description="Physics-embedded sEMG joint-angle estimation.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("-c", "--config", required=config_required, help="TOML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration value (repeatable)")

    p = sub.add_parser("simulate", help="generate synthetic trials")
    common(p)
    p.add_argument("-o", "--out", help="output directory (default: paths.data)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="filter, rectify and normalise raw recordings")
    common(p, config_required=False)
    p.add_argument("--raw", required=True, help="directory of raw trial CSVs")
    p.add_argument("--mvc", required=True, help="CSV with columns channel,mvc")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="two-phase training")
    common(p)
    p.add_argument("--data", help="trial directory (default: paths.data)")
    p.add_argument("-o", "--out", help="run directory (default: paths.out)")
    p.add_argument("--resume", action="store_true", help="reuse an existing phase-one checkpoint")
    p.set_defaults(func=cmd_train)

    for name, fn, hlp in (("estimate", cmd_estimate, "free-running trajectories"),
                          ("evaluate", cmd_evaluate, "metrics and report")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("-o", "--out", required=True)
        p.add_argument("--trials", choices=("all", "test"), default="all",
                       help="evaluate every trial or only the checkpoint's held-out split")
        if name == "evaluate":
            p.add_argument("--compare", help="second checkpoint for a paired comparison")
        p.set_defaults(func=fn)

    p = sub.add_parser("report", help="tabulate metrics from evaluate runs")
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrainingError, sim.SimulationError, msk.GeometryError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        snap = getattr(exc, "snapshot", None)
        if snap:
            print("parameter snapshot: " + json.dumps(snap), file=sys.stderr)
        return EXIT_NUMERIC
    except (cfgmod.ConfigError, InputError, data_io.TrialFormatError, SignalError, MetricError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
