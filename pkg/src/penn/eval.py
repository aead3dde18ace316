"""Accuracy metrics, per-trial reports and the paired significance test."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

METRIC_COLUMNS = ("trial", "rmse_deg", "r2")
TRAJECTORY_COLUMNS = ("time_s", "theta_deg", "theta_phy_deg", "theta_res_deg", "theta_hat_deg")


class MetricError(ValueError):
    pass


def _pair(theta, theta_hat):
    a = np.asarray(theta, dtype=np.float64).ravel()
    b = np.asarray(theta_hat, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise MetricError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise MetricError("empty sequence")
    return a, b


def rmse(theta, theta_hat, units="rad"):
    """Root-mean-square error in degrees; ``units`` names the input unit."""
    if units not in ("rad", "deg"):
        raise MetricError(f"unknown unit {units!r}")
    a, b = _pair(theta, theta_hat)
    r = float(np.sqrt(np.mean((a - b) ** 2)))
    return math.degrees(r) if units == "rad" else r


def r_squared(theta, theta_hat):
    """Coefficient of determination against the segment's own mean."""
    a, b = _pair(theta, theta_hat)
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("R^2 undefined for constant ground truth")
    return 1.0 - float(np.sum((a - b) ** 2)) / ss_tot


# -- Student t distribution -------------------------------------------------

def _betacf(a, b, x, max_iter=500, tol=1e-15):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a, b, x):
    """Regularised incomplete beta function ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t, dof):
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * betainc(0.5 * dof, 0.5, dof / (dof + t * t))
    return 1.0 - tail if t > 0 else tail


def t_ppf(q, dof):
    """Quantile of the t distribution by bisection on :func:`t_cdf`."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    lo, hi = -1.0, 1.0
    while t_cdf(lo, dof) > q:
        lo *= 2.0
    while t_cdf(hi, dof) < q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, dof) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


@dataclass
class TTestResult:
    t: float
    p: float
    dof: int
    stars: str
    degenerate: bool = False
    note: str = ""


def significance_stars(p):
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def paired_t_test(a, b):
    """Two-sided paired t-test of ``a - b`` with ``n - 1`` degrees of freedom.

    Zero-variance differences have no finite statistic; they are returned with
    ``degenerate=True`` (``t = 0, p = 1`` when all differences vanish,
    ``t = +-inf, p = 0`` otherwise).
    """
    x, y = _pair(a, b)
    n = x.size
    if n < 2:
        raise MetricError("paired t-test needs at least two pairs")
    d = x - y
    dbar = float(d.mean())
    sd = float(d.std(ddof=1))
    dof = n - 1
    if sd == 0.0:
        if dbar == 0.0:
            return TTestResult(0.0, 1.0, dof, "", True, "all differences are zero")
        return TTestResult(math.copysign(math.inf, dbar), 0.0, dof, "", True,
                           "differences have zero variance")
    t = dbar / (sd / math.sqrt(n))
    p = min(1.0, 2.0 * t_cdf(-abs(t), dof))
    return TTestResult(t, p, dof, significance_stars(p))


# -- reports ----------------------------------------------------------------

@dataclass
class MetricReport:
    method: str
    trials: list
    rmse_deg: list
    r2: list
    mode: str = "free_running"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.trials) == len(self.rmse_deg) == len(self.r2):
            raise MetricError("per-trial lists must have equal length")
        if any(v < 0 for v in self.rmse_deg) or any(v > 1.0 for v in self.r2):
            raise MetricError("RMSE must be >= 0 and R^2 <= 1")

    @property
    def n(self):
        return len(self.trials)

    def aggregate(self):
        r, q = np.asarray(self.rmse_deg), np.asarray(self.r2)
        ddof = 1 if self.n > 1 else 0
        return {"rmse_mean": float(r.mean()), "rmse_std": float(r.std(ddof=ddof)),
                "r2_mean": float(q.mean()), "r2_std": float(q.std(ddof=ddof))}


def report_from_estimates(method, names, estimates, mode="free_running", provenance=None):
    rm = [rmse(e.theta, e.theta_hat) for e in estimates]
    r2 = [r_squared(e.theta, e.theta_hat) for e in estimates]
    return MetricReport(method, list(names), rm, r2, mode, dict(provenance or {}))


def write_metrics_csv(path, report: MetricReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for name, r, q in zip(report.trials, report.rmse_deg, report.r2):
            w.writerow([name, repr(r), repr(q)])


def read_metrics_csv(path, method):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or tuple(rows[0]) != METRIC_COLUMNS:
        raise MetricError(f"{path}: expected columns {', '.join(METRIC_COLUMNS)}")
    return MetricReport(method, [r["trial"] for r in rows], [float(r["rmse_deg"]) for r in rows],
                        [float(r["r2"]) for r in rows])


def write_trajectory_csv(path, estimate, fs):
    deg = np.degrees
    cols = (estimate.t_index / fs, deg(estimate.theta), deg(estimate.theta_phy),
            deg(estimate.theta_res), deg(estimate.theta_hat))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def format_table(reports, label="Trial"):
    """Text table: one row per trial, method columns of RMSE and R^2, an average row."""
    names = reports[0].trials
    for r in reports[1:]:
        if r.trials != names:
            raise MetricError("reports cover different trials")
    head1 = f"{'':<14}" + "".join(f"{r.method:^20}" for r in reports)
    head2 = f"{label:<14}" + "".join(f"{'RMSE (deg)':>11}{'R2':>9}" for _ in reports)
    lines = [head1.rstrip(), head2, "-" * len(head2)]
    for i, name in enumerate(names):
        lines.append(f"{str(name):<14}" + "".join(f"{r.rmse_deg[i]:>11.3f}{r.r2[i]:>9.3f}" for r in reports))
    lines.append("-" * len(head2))
    lines.append(f"{'Average':<14}" + "".join(
        f"{r.aggregate()['rmse_mean']:>11.3f}{r.aggregate()['r2_mean']:>9.3f}" for r in reports))
    return "\n".join(lines)


def format_comparison(a: MetricReport, b: MetricReport):
    """Paired t-test block comparing two methods per trial on both metrics."""
    lines = [f"Paired t-test: {a.method} vs {b.method} (n={a.n})"]
    for metric in ("rmse_deg", "r2"):
        res = paired_t_test(getattr(a, metric), getattr(b, metric))
        extra = f" [{res.note}]" if res.degenerate else ""
        lines.append(f"  {metric:<9} t={res.t:.4f} dof={res.dof} p={res.p:.4g} {res.stars}{extra}".rstrip())
    return "\n".join(lines)
