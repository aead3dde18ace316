"""Two-phase training: physics calibration, then residual learning."""
from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet as dn
from . import kernels, msk, sim
from .model import (NET_PARAMS, PHASE_ONE, PHASE_TWO, PennModel, PhysicsReparam, loss_res,
                    loss_total, physics_forward, residual_forward)
from .msk import GeometryPoly, JointParams
from .signal import first_target, window_batch

CHECKPOINT_VERSION = 1
LOSS_COLUMNS = ("epoch", "phase", "l_phy", "l_res", "l_total", "split")


class TrainingError(RuntimeError):
    """Numerical failure during training; ``snapshot`` holds the offending state."""

    def __init__(self, msg, snapshot=None):
        super().__init__(msg)
        self.snapshot = snapshot or {}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_phase1: int = 1
    batch_phase2: int = 32
    patience: int = 30
    split: float = 0.85
    phase1_tol: float = 1e-4
    phase1_window: int = 5
    phase1_max_epochs: int = 200
    phase1_zero_loss: float = 1e-20
    phase2_max_epochs: int = 300
    freeze_physics: bool = True
    normalize_residual: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie strictly between 0 and 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_phase1 != 1:
            raise ValueError("phase one runs with batch size 1")
        if self.batch_phase2 < 1:
            raise ValueError("batch_phase2 must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.phase1_window < 1 or self.phase1_max_epochs < 0 or self.phase2_max_epochs < 0:
            raise ValueError("epoch limits must be non-negative and the window >= 1")


@dataclass
class LossRecord:
    epoch: int
    phase: int
    l_phy: float
    l_res: float
    l_total: float
    split: str


@dataclass
class PhaseResult:
    epochs: int
    stop_reason: str
    best_epoch: int
    records: list = field(default_factory=list)


def split_indices(n, ratio=0.85, seed=0):
    """Trial indices for training and testing.

    ``floor(ratio * n)`` trials train and at least one is held out.
    """
    if n < 2:
        raise ValueError("need at least two trials to split")
    n_train = max(min(int(np.floor(ratio * n)), n - 1), 1)
    perm = np.random.default_rng([seed, 7]).permutation(n)
    return sorted(int(i) for i in perm[:n_train]), sorted(int(i) for i in perm[n_train:])


def split_dataset(trials, ratio=0.85, seed=0):
    """Trial-level split; no trial contributes windows to both sides."""
    tr, te = split_indices(len(trials), ratio, seed)
    return [trials[i] for i in tr], [trials[i] for i in te]


# -- teacher-forced sample assembly ----------------------------------------

@dataclass
class Samples:
    theta1: np.ndarray
    theta2: np.ndarray
    u: np.ndarray          # (M, N)
    target: np.ndarray
    x: np.ndarray = None   # (M, N + 2, W) windows, built on demand


def teacher_forced_samples(trials, W, with_windows=False):
    t1, t2, us, tg, xs = [], [], [], [], []
    for tr in trials:
        idx = np.arange(first_target(W), tr.n_samples)
        t1.append(tr.angle[idx - 1])
        t2.append(tr.angle[idx - 2])
        us.append(tr.emg[:, idx].T)
        tg.append(tr.angle[idx])
        if with_windows:
            xs.append(window_batch(tr.emg, tr.angle, idx, W))
    s = Samples(np.concatenate(t1), np.concatenate(t2), np.concatenate(us), np.concatenate(tg))
    if with_windows:
        s.x = np.concatenate(xs)
    return s


def _dt_of(trials):
    fs = {float(t.fs) for t in trials}
    if len(fs) != 1:
        raise ValueError(f"trials must share one sampling rate, got {sorted(fs)}")
    return 1.0 / fs.pop()


def _physics_values(model, s: Samples, dt):
    try:
        return physics_forward((s.theta1, s.theta2), s.u, model, dt)
    except (msk.GeometryError, sim.DivergenceError) as exc:
        raise TrainingError(f"physics evaluation failed: {exc}", _snapshot(model)) from exc


def _snapshot(model):
    P, A = model.reparam.decode(model.z)
    return {"z": model.z.tolist(), "physics": P.tolist(), "a_shape": A}


def _check_finite(value, model, what):
    if not np.isfinite(value):
        raise TrainingError(f"{what} became non-finite", _snapshot(model))


def _residual_values(model, s: Samples, phy, chunk=4096):
    out = np.empty(phy.shape[0])
    for a in range(0, phy.shape[0], chunk):
        out[a:a + chunk] = residual_forward(s.x[a:a + chunk], phy[a:a + chunk], model, training=False)
    return out


# -- phase one --------------------------------------------------------------

def train_phase_one(train, test, model: PennModel, cfg: TrainConfig, log=None):
    """Calibrate the physics parameters with teacher-forced history.

    Batch-1 Adam on the reparameterised physics logits, one pass over the
    shuffled training samples per epoch.  Stops when the training loss
    improves by less than ``phase1_tol`` (relative) over ``phase1_window``
    epochs, when the held-out loss has not improved for ``patience`` epochs,
    or at ``phase1_max_epochs``.  The parameters with the best held-out loss
    are kept.  With a zero fusion layer ``L_res`` equals ``L_phy`` here.
    """
    dt = _dt_of(train + test)
    W = model.window
    tr = teacher_forced_samples(train, W)
    te = teacher_forced_samples(test, W)
    rng = np.random.default_rng([cfg.seed, 1])
    rep = model.reparam
    init = rep.init.ravel().copy()
    s_lo, s_hi = rep.scale_bounds
    a_lo, a_hi = rep.a_bounds
    m = np.zeros(rep.size)
    v = np.zeros(rep.size)
    step = 0
    records = []

    def evaluate(epoch):
        out = []
        for split, s in (("train", tr), ("test", te)):
            phy = _physics_values(model, s, dt)
            l_phy = float(np.mean((phy - s.target) ** 2))
            _check_finite(l_phy, model, f"phase-one {split} loss")
            l_res = l_phy if not np.any(model.net["fuse_w"]) and not np.any(model.net["fuse_b"]) \
                else float(np.mean((phy + _residual_values(model, _with_windows(s, split), phy)
                                    - s.target) ** 2))
            rec = LossRecord(epoch, 1, l_phy, l_res, loss_total(PHASE_ONE, l_phy, l_res), split)
            out.append(rec)
            if log:
                log(rec)
        records.extend(out)
        return out[0].l_phy, out[1].l_phy

    def _with_windows(s, split):
        if s.x is None:
            s.x = teacher_forced_samples(train if split == "train" else test, W, True).x
        return s

    l_train, l_test = evaluate(0)
    history = [l_train]
    best, best_z, best_epoch, since = l_test, model.z.copy(), 0, 0
    if l_train <= cfg.phase1_zero_loss:
        return PhaseResult(0, "zero_loss", 0, records)
    reason = "max_epochs"
    epoch = 0
    for epoch in range(1, cfg.phase1_max_epochs + 1):
        order = rng.permutation(tr.target.size)
        _, step, status = kernels.phase_one_epoch(
            order, tr.theta1, tr.theta2, tr.u, tr.target, model.z, init, a_lo, a_hi, s_lo, s_hi,
            m, v, step, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, model.geometry.mtu_coeffs,
            model.joint.as_array(), dt, model.lambda_al, model.v_max_factor)
        if status != kernels.OK:
            kind = "geometry violated" if status == kernels.ERR_GEOMETRY else "non-finite update"
            raise TrainingError(f"phase one diverged in epoch {epoch}: {kind}", _snapshot(model))
        l_train, l_test = evaluate(epoch)
        history.append(l_train)
        if l_test < best:
            best, best_z, best_epoch, since = l_test, model.z.copy(), epoch, 0
        else:
            since += 1
        if epoch >= cfg.phase1_window:
            ref = history[epoch - cfg.phase1_window]
            if ref <= 0 or (ref - l_train) / ref < cfg.phase1_tol:
                reason = "converged"
                break
        if since >= cfg.patience:
            reason = "patience"
            break
    model.z[:] = best_z
    model.meta["phase1"] = {"epochs": epoch, "stop": reason, "best_epoch": best_epoch}
    return PhaseResult(epoch, reason, best_epoch, records)


# -- phase two --------------------------------------------------------------

def train_phase_two(train, test, model: PennModel, cfg: TrainConfig, log=None):
    """Fit the residual network on teacher-forced windows.

    Shuffled mini-batches of ``batch_phase2`` windows, Adam on the network
    weights (and the physics logits when ``freeze_physics`` is off).  Early
    stopping watches the held-out ``L_res``; the best weights are restored.
    """
    dt = _dt_of(train + test)
    W = model.window
    tr = teacher_forced_samples(train, W, with_windows=True)
    te = teacher_forced_samples(test, W, with_windows=True)
    rng = np.random.default_rng([cfg.seed, 2])
    names = list(NET_PARAMS)
    leaves = {k: dn.Tensor(model.net[k], requires_grad=True) for k in names}
    train_z = not cfg.freeze_physics
    if train_z:
        leaves["z"] = dn.Tensor(model.z, requires_grad=True)
        names.append("z")
    opt = dn.Adam([leaves[k] for k in names], lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    phy_tr = _physics_values(model, tr, dt)
    if cfg.normalize_residual:
        # fixed output scale: the fusion layer then learns in units of the
        # typical phase-one residual instead of radians
        rms = float(np.sqrt(np.mean((tr.target - phy_tr) ** 2)))
        model.res_scale = rms if rms > 0 else 1.0
    records = []

    def evaluate(epoch):
        out = []
        for split, s in (("train", tr), ("test", te)):
            phy = _physics_values(model, s, dt) if train_z or split == "test" else phy_tr
            res = _residual_values(model, s, phy)
            l_phy = float(np.mean((phy - s.target) ** 2))
            l_res = float(np.mean((phy + res - s.target) ** 2))
            _check_finite(l_res, model, f"phase-two {split} loss")
            rec = LossRecord(epoch, 2, l_phy, l_res, loss_total(PHASE_TWO, l_phy, l_res), split)
            out.append(rec)
            if log:
                log(rec)
        records.extend(out)
        return out[1].l_res

    def snapshot():
        return {k: model.net[k].copy() for k in NET_PARAMS}, model.z.copy()

    best = evaluate(0)
    best_state, best_epoch, since = snapshot(), 0, 0
    reason = "max_epochs"
    epoch = 0
    M = tr.target.size
    bs = cfg.batch_phase2
    for epoch in range(1, cfg.phase2_max_epochs + 1):
        order = rng.permutation(M)
        for a in range(0, M, bs):
            idx = order[a:a + bs]
            if train_z:
                phy = physics_forward((tr.theta1[idx], tr.theta2[idx]), tr.u[idx], model, dt,
                                      z=leaves["z"])
            else:
                phy = phy_tr[idx]
            net = {k: leaves[k] for k in NET_PARAMS}
            res = residual_forward(tr.x[idx], phy, model, training=True, rng=rng, net=net)
            loss = loss_res(res, phy, tr.target[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        l_test = evaluate(epoch)
        if l_test < best:
            best, best_state, best_epoch, since = l_test, snapshot(), epoch, 0
        else:
            since += 1
            if since >= cfg.patience:
                reason = "early_stopping"
                break
    net, z = best_state
    for k in NET_PARAMS:
        model.net[k][...] = net[k]
    model.z[:] = z
    model.meta["phase2"] = {"epochs": epoch, "stop": reason, "best_epoch": best_epoch}
    return PhaseResult(epoch, reason, best_epoch, records)


@dataclass
class TrainResult:
    model: PennModel
    phase1: PhaseResult
    phase2: PhaseResult
    train_ids: list
    test_ids: list

    @property
    def records(self):
        return self.phase1.records + self.phase2.records


def train_penn(trials, model: PennModel, cfg: TrainConfig, log=None, after_phase_one=None):
    """Split, run phase one, call ``after_phase_one`` (e.g. to checkpoint), run phase two."""
    tr_idx, te_idx = split_indices(len(trials), cfg.split, cfg.seed)
    train, test = [trials[i] for i in tr_idx], [trials[i] for i in te_idx]
    p1 = train_phase_one(train, test, model, cfg, log)
    if after_phase_one:
        after_phase_one(model, p1)
    p2 = train_phase_two(train, test, model, cfg, log)
    return TrainResult(model, p1, p2, tr_idx, te_idx)


# -- persistence ------------------------------------------------------------

def write_loss_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for r in records:
            w.writerow([r.epoch, r.phase, repr(r.l_phy), repr(r.l_res), repr(r.l_total), r.split])


def read_loss_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [LossRecord(int(r["epoch"]), int(r["phase"]), float(r["l_phy"]), float(r["l_res"]),
                       float(r["l_total"]), r["split"]) for r in rows]


def _write_npz(path, arrays):
    # fixed timestamps keep the archive bytes a pure function of the arrays
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        buf.getvalue())


def save_checkpoint(directory, model: PennModel, phase, epoch, losses=None, extra=None):
    """Write ``manifest.json`` and ``weights.npz`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = {"z": model.z, "init": model.reparam.init, "mtu_coeffs": model.geometry.mtu_coeffs}
    arrays.update({f"net_{k}": v for k, v in model.net.items()})
    _write_npz(d / "weights.npz", arrays)
    rep = model.reparam
    manifest = {
        "version": CHECKPOINT_VERSION,
        "phase": int(phase),
        "epoch": int(epoch),
        "seed": int(model.seed),
        "losses": losses or {},
        "n_muscles": model.n_muscles,
        "a_init": rep.a_init,
        "scale_bounds": list(rep.scale_bounds),
        "a_bounds": list(rep.a_bounds),
        "window": model.window,
        "dropout": model.dropout,
        "pool_stride": model.pool_stride,
        "lambda_al": model.lambda_al,
        "v_max_factor": model.v_max_factor,
        "res_scale": model.res_scale,
        "theta_range": list(model.geometry.theta_range),
        "muscle_names": list(model.geometry.names) if model.geometry.names else None,
        "joint": asdict(model.joint),
        "meta": model.meta,
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_checkpoint(directory):
    d = Path(directory)
    mpath, wpath = d / "manifest.json", d / "weights.npz"
    if not mpath.is_file() or not wpath.is_file():
        raise FileNotFoundError(f"no checkpoint in {d}")
    man = json.loads(mpath.read_text())
    if man.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {man.get('version')}")
    with np.load(wpath) as npz:
        arr = {k: npz[k] for k in npz.files}
    names = tuple(man["muscle_names"]) if man.get("muscle_names") else None
    geom = GeometryPoly(arr["mtu_coeffs"], tuple(man["theta_range"]), names)
    rep = PhysicsReparam(arr["init"], man["a_init"], tuple(man["scale_bounds"]), tuple(man["a_bounds"]))
    net = {k: arr[f"net_{k}"] for k in NET_PARAMS}
    model = PennModel(rep, geom, JointParams(**man["joint"]), arr["z"], net, man["window"],
                      man["dropout"], man["pool_stride"], man["lambda_al"], man["v_max_factor"],
                      man["seed"], man.get("meta", {}), man.get("res_scale", 1.0))
    if geom.n_muscles != man["n_muscles"] or net["conv_w"].shape[1] != man["n_muscles"] + 2:
        raise ValueError("checkpoint shapes do not match its manifest")
    return model, man
