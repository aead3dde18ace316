"""sEMG / kinematics pre-processing and training-window assembly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    order: int
    cutoff_hz: object
    fs: float

    def __post_init__(self):
        if self.kind not in ("lowpass", "highpass", "bandpass"):
            raise SignalError(f"unknown filter kind {self.kind!r}")
        if self.order < 2 or self.order % 2:
            raise SignalError("filter order must be an even integer >= 2")
        if self.fs <= 0:
            raise SignalError("fs must be positive")
        cut = np.atleast_1d(np.asarray(self.cutoff_hz, dtype=np.float64))
        if self.kind == "bandpass":
            if cut.size != 2 or not cut[0] < cut[1]:
                raise SignalError("bandpass needs two increasing corner frequencies")
        elif cut.size != 1:
            raise SignalError(f"{self.kind} needs one corner frequency")
        if np.any(cut <= 0) or np.any(cut >= self.fs / 2):
            raise SignalError("corner frequencies must lie strictly inside (0, fs/2)")
        object.__setattr__(self, "cutoff_hz", tuple(float(c) for c in cut))


def _prewarp(f, fs):
    return 2.0 * fs * np.tan(np.pi * f / fs)


def _bilinear(s, fs):
    return (2.0 * fs + s) / (2.0 * fs - s)


def butterworth_design(spec: FilterSpec):
    """Second-order sections ``[b0, b1, b2, 1, a1, a2]`` of a digital Butterworth filter.

    Analog prototype poles are frequency-transformed at pre-warped corners and
    mapped through the bilinear transform.  For a bandpass ``order`` is the
    prototype order, so the digital filter has ``2 * order`` poles.  Gain is
    normalised to exactly 1 at DC (lowpass), Nyquist (highpass) or the
    pre-warped centre frequency (bandpass).
    """
    n, fs = spec.order, spec.fs
    k = np.arange(n)
    proto = np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))
    if spec.kind == "lowpass":
        wc = _prewarp(spec.cutoff_hz[0], fs)
        poles = wc * proto
        b = np.array([1.0, 2.0, 1.0])
        z_ref = 1.0
    elif spec.kind == "highpass":
        wc = _prewarp(spec.cutoff_hz[0], fs)
        poles = wc / proto
        b = np.array([1.0, -2.0, 1.0])
        z_ref = -1.0
    else:
        w1, w2 = (_prewarp(f, fs) for f in spec.cutoff_hz)
        w0, bw = np.sqrt(w1 * w2), w2 - w1
        pb = proto * bw / 2.0
        root = np.sqrt(pb * pb - w0 * w0)
        poles = np.concatenate([pb + root, pb - root])
        b = np.array([1.0, 0.0, -1.0])
        z_ref = np.exp(1j * 2.0 * np.arctan(w0 / (2.0 * fs)))
    zp = _bilinear(poles, fs)
    zp = zp[zp.imag > 0]
    zp = zp[np.argsort(np.abs(zp))]
    sos = np.zeros((zp.size, 6))
    for i, p in enumerate(zp):
        sos[i, :3] = b
        sos[i, 3:] = [1.0, -2.0 * p.real, abs(p) ** 2]
    gain = 1.0 / abs(_sos_eval(sos, z_ref))
    sos[:, :3] *= gain ** (1.0 / sos.shape[0])
    return sos


def _sos_eval(sos, z):
    zi = 1.0 / np.asarray(z, dtype=np.complex128)
    h = np.ones_like(zi)
    for b0, b1, b2, a0, a1, a2 in sos:
        h = h * (b0 + b1 * zi + b2 * zi * zi) / (a0 + a1 * zi + a2 * zi * zi)
    return h


def freq_response(sos, f_hz, fs):
    """Complex response at frequencies ``f_hz`` (Hz)."""
    return _sos_eval(sos, np.exp(1j * 2.0 * np.pi * np.asarray(f_hz, dtype=np.float64) / fs))


def sos_poles(sos):
    return np.concatenate([np.roots(s[3:]) for s in sos])


def steady_state(sos):
    """Section states of the cascade after a unit step has settled."""
    zi = np.zeros((sos.shape[0], 2))
    level = 1.0
    for i, (b0, b1, b2, _, a1, a2) in enumerate(sos):
        g = (b0 + b1 + b2) / (1.0 + a1 + a2)
        zi[i] = [(g - b0) * level, (b2 - a2 * g) * level]
        level *= g
    return zi


def lfilter_sos(sos, x, zi=None):
    """Single causal pass along the last axis (streaming mode)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim > 1:
        return np.stack([lfilter_sos(sos, row, zi) for row in x])
    z0 = np.zeros((sos.shape[0], 2)) if zi is None else zi
    return kernels.sosfilt(sos, x, z0)[0]


def _forward_backward(sos, x, zss):
    y = kernels.sosfilt(sos, x, zss * x[0])[0][::-1]
    return kernels.sosfilt(sos, y, zss * y[0])[0][::-1]


def filt_filt(sos, x, padlen=None):
    """Zero-phase filtering along the last axis.

    The signal is extended at both ends by odd reflection, filtered
    forward-backward from steady-state initial conditions, and averaged with
    the backward-forward pass so the result commutes exactly with time
    reversal.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim > 1:
        return np.stack([filt_filt(sos, row, padlen) for row in x])
    if padlen is None:
        padlen = 3 * 2 * sos.shape[0]
    if x.size <= padlen:
        raise SignalError(f"signal of length {x.size} too short for edge padding {padlen}")
    if padlen:
        head = 2.0 * x[0] - x[padlen:0:-1]
        tail = 2.0 * x[-1] - x[-2:-padlen - 2:-1]
        ext = np.concatenate([head, x, tail])
    else:
        ext = x
    zss = steady_state(sos)
    fb = _forward_backward(sos, ext, zss)
    bf = _forward_backward(sos, ext[::-1], zss)[::-1]
    y = 0.5 * (fb + bf)
    return y[padlen:padlen + x.size] if padlen else y


def edge_padlen(spec: FilterSpec, n_samples):
    """Reflection length covering one period of the lowest corner frequency.

    The short default of :func:`filt_filt` leaves visible start-up transients
    for low corners such as envelope and kinematics filters; one corner
    period keeps them below a percent for slowly varying signals.
    """
    period = int(np.ceil(spec.fs / min(spec.cutoff_hz)))
    return max(min(period, n_samples - 1), 0)


def resample_linear(x, fs_in, fs_out):
    """Linear interpolation onto a ``fs_out`` grid spanning the same duration."""
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[-1]
    duration = (n_in - 1) / fs_in
    n_out = int(np.floor(duration * fs_out + 1e-9)) + 1
    t_in = np.arange(n_in) / fs_in
    t_out = np.arange(n_out) / fs_out
    if x.ndim == 1:
        return np.interp(t_out, t_in, x)
    return np.stack([np.interp(t_out, t_in, row) for row in x])


@dataclass(frozen=True)
class EmgPipeline:
    band_hz: tuple = (20.0, 450.0)
    band_order: int = 4
    envelope_hz: float = 4.0
    envelope_order: int = 4
    fs_out: float = 1000.0


def preprocess_emg(raw, fs_raw, mvc, pipeline: EmgPipeline = EmgPipeline()):
    """Bandpass, rectify, envelope, MVC-normalise, clip and resample raw sEMG.

    ``raw`` is ``(N, T)``; ``mvc`` holds one positive value per channel, in
    the units of the rectified envelope.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    mvc = np.atleast_1d(np.asarray(mvc, dtype=np.float64))
    if mvc.size != raw.shape[0]:
        raise SignalError(f"need one MVC value per channel ({raw.shape[0]}), got {mvc.size}")
    if np.any(mvc <= 0):
        raise SignalError("MVC values must be positive")
    if fs_raw < 2 * pipeline.band_hz[1]:
        raise SignalError(f"raw sampling rate {fs_raw} Hz below twice the {pipeline.band_hz[1]} Hz band edge")
    spec = FilterSpec("bandpass", pipeline.band_order, pipeline.band_hz, fs_raw)
    rect = np.abs(filt_filt(butterworth_design(spec), raw, edge_padlen(spec, raw.shape[-1])))
    return emg_envelope(rect, fs_raw, mvc, pipeline)


def emg_envelope(rectified, fs, mvc, pipeline: EmgPipeline = EmgPipeline()):
    """Lowpass, MVC-normalise, clip and resample an already rectified signal."""
    x = np.atleast_2d(np.asarray(rectified, dtype=np.float64))
    mvc = np.atleast_1d(np.asarray(mvc, dtype=np.float64))
    if mvc.size != x.shape[0] or np.any(mvc <= 0):
        raise SignalError("need one positive MVC value per channel")
    spec = FilterSpec("lowpass", pipeline.envelope_order, pipeline.envelope_hz, fs)
    x = filt_filt(butterworth_design(spec), x, edge_padlen(spec, x.shape[-1]))
    x = np.clip(x / mvc[:, None], 0.0, 1.0)
    if fs != pipeline.fs_out:
        x = np.clip(resample_linear(x, fs, pipeline.fs_out), 0.0, 1.0)
    return x


def smooth_angle(raw_angle, fs, cutoff_hz=1.0, order=2):
    """Zero-phase second-order 1 Hz lowpass of a joint-angle trace."""
    spec = FilterSpec("lowpass", order, cutoff_hz, fs)
    raw_angle = np.asarray(raw_angle, dtype=np.float64)
    return filt_filt(butterworth_design(spec), raw_angle, edge_padlen(spec, raw_angle.shape[-1]))


# -- windows ----------------------------------------------------------------

@dataclass
class WindowSample:
    x: np.ndarray          # (N + 2, W)
    target: float
    t_index: int


def first_target(W):
    """Earliest target index whose window and two-step history fit in the trial."""
    return W + 1


def window_indices(n_samples, W):
    t0 = first_target(W)
    if n_samples < W + 2:
        raise SignalError(f"trial of {n_samples} samples too short for window {W}")
    return np.arange(t0, n_samples)


def window_batch(emg, history, t_index, W):
    """Stack windows ``(B, N + 2, W)`` ending at each index in ``t_index``.

    EMG rows cover samples ``t - W + 1 .. t``; the last two rows broadcast
    ``history[t - 1]`` and ``history[t - 2]`` across the window.
    """
    emg = np.atleast_2d(emg)
    t_index = np.asarray(t_index)
    n = emg.shape[0]
    cols = t_index[:, None] + np.arange(-W + 1, 1)[None, :]
    x = np.empty((t_index.size, n + 2, W))
    x[:, :n, :] = np.transpose(emg[:, cols], (1, 0, 2))
    history = np.asarray(history, dtype=np.float64)
    x[:, n, :] = history[t_index - 1][:, None]
    x[:, n + 1, :] = history[t_index - 2][:, None]
    return x


def make_windows(trial, history=None, W=16):
    """One WindowSample per estimable index (stride 1).

    ``history`` defaults to the trial's own angle (teacher forcing).
    """
    hist = trial.angle if history is None else np.asarray(history, dtype=np.float64)
    if hist.shape[0] != trial.n_samples:
        raise SignalError("history stream must match the trial length")
    idx = window_indices(trial.n_samples, W)
    xs = window_batch(trial.emg, hist, idx, W)
    return [WindowSample(x, float(trial.angle[t]), int(t)) for x, t in zip(xs, idx)]
