"""Trial files: a CSV of samples plus a JSON sidecar of metadata."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .sim import Trial


class TrialFormatError(ValueError):
    pass


def trial_columns(n_channels):
    return ["time_s"] + [f"emg_{i + 1}" for i in range(n_channels)] + ["angle_deg"]


def write_trial(path, trial: Trial):
    """Write ``<name>.csv`` and ``<name>.json``; angles are stored in degrees."""
    path = Path(path)
    t = trial.time
    ang = np.degrees(trial.angle)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trial_columns(trial.n_channels))
        for k in range(trial.n_samples):
            w.writerow([repr(float(t[k]))] + [repr(float(v)) for v in trial.emg[:, k]]
                       + [repr(float(ang[k]))])
    meta = dict(trial.meta, fs=trial.fs, n_channels=trial.n_channels, n_samples=trial.n_samples)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_columns(path):
    """Header and float matrix of a numeric CSV, with line-precise errors."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TrialFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise TrialFormatError(f"{path}:{i + 2}: expected {len(header)} fields, got {len(row)}")
        try:
            data[i] = [float(v) for v in row]
        except ValueError as exc:
            raise TrialFormatError(f"{path}:{i + 2}: {exc}") from None
    return header, data


def _fs_from_time(path, t):
    if t.size < 2:
        raise TrialFormatError(f"{path}: need at least two samples")
    d = np.diff(t)
    if np.any(d <= 0):
        raise TrialFormatError(f"{path}: time_s must be strictly increasing")
    step = float(np.median(d))
    if np.max(np.abs(d - step)) > 1e-6 * max(step, 1.0) + 1e-9:
        raise TrialFormatError(f"{path}: time_s is not uniformly sampled")
    return 1.0 / step


def read_trial(path):
    path = Path(path)
    header, data = read_columns(path)
    n = len(header) - 2
    if n < 1 or header != trial_columns(n):
        raise TrialFormatError(f"{path}:1: header must be {', '.join(trial_columns(max(n, 1)))}")
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.is_file() else {}
    fs = float(meta.pop("fs")) if "fs" in meta else _fs_from_time(path, data[:, 0])
    for k in ("n_channels", "n_samples"):
        meta.pop(k, None)
    meta.setdefault("name", path.stem)
    return Trial(fs, data[:, 1:1 + n].T.copy(), np.radians(data[:, -1]), meta)


def list_trials(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory {d} does not exist")
    files = sorted(p for p in d.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no trial CSVs in {d}")
    return files


def load_trials(directory):
    return [read_trial(p) for p in list_trials(directory)]


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def directory_digest(directory, pattern="*.csv"):
    h = hashlib.sha256()
    for p in sorted(Path(directory).glob(pattern)):
        h.update(p.name.encode())
        h.update(file_digest(p).encode())
    return h.hexdigest()
