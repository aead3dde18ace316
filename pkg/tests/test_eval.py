import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, strategies as st

from oracles import paired_t_bruteforce, r2_bruteforce, rmse_deg_bruteforce
from penn.eval import (MetricError, MetricReport, betainc, format_comparison, format_table,
                       paired_t_test, r_squared, read_metrics_csv, rmse, t_cdf, t_ppf,
                       write_metrics_csv, write_trajectory_csv)
from penn.model import Estimate


def test_rmse_examples():
    a = np.radians([10.0, 20.0, 30.0])
    assert rmse(a, a) == 0.0
    assert rmse(a, a + math.radians(2.0)) == pytest.approx(2.0, abs=1e-12)
    assert rmse([0, 0, 0, 0], [1, -1, 1, -1], units="deg") == 1.0
    with pytest.raises(MetricError):
        rmse([1, 2], [1])
    with pytest.raises(MetricError):
        rmse([], [])
    with pytest.raises(MetricError):
        rmse([1.0], [1.0], units="grad")


def test_r_squared_examples():
    th = np.array([0.0, 1.0, 2.0, 3.0])
    assert r_squared(th, th) == 1.0
    assert r_squared(th, np.full(4, th.mean())) == 0.0
    assert r_squared(th, [0, 1, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    assert r_squared(th, -th) < 0
    with pytest.raises(MetricError):
        r_squared(np.ones(5), np.arange(5.0))


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 200))
def test_metric_invariances(seed, n):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=n), r.normal(size=n)
    assert rmse(a, b) == pytest.approx(rmse(b, a), rel=1e-14)
    c, k = r.normal() * 5, r.uniform(0.1, 10)
    assert r_squared(a + c, b + c) == pytest.approx(r_squared(a, b), rel=1e-9, abs=1e-9)
    assert rmse(k * a, k * b) == pytest.approx(k * rmse(a, b), rel=1e-12)
    assert r_squared(k * a, k * b) == pytest.approx(r_squared(a, b), rel=1e-9, abs=1e-12)


def test_t_distribution_against_scipy():
    for dof in (1, 2, 5, 17, 60):
        for t in (-7.0, -1.3, 0.0, 0.4, 2.5, 12.0):
            assert abs(t_cdf(t, dof) - scipy.stats.t.cdf(t, dof)) < 1e-13
    assert abs(t_ppf(0.975, 5) - 2.5706) < 1e-3
    assert abs(t_ppf(0.975, 5) - scipy.stats.t.ppf(0.975, 5)) < 1e-10
    assert betainc(2.0, 3.0, 0.0) == 0.0 and betainc(2.0, 3.0, 1.0) == 1.0
    assert abs(betainc(2.0, 3.0, 0.4) - scipy.special.betainc(2.0, 3.0, 0.4)) < 1e-14


def test_paired_t_examples():
    a = np.array([5.1, 4.8, 5.4, 4.9, 5.2, 5.0])
    b = a - np.array([2.1, 1.8, 2.4, 1.9, 2.2, 2.0])
    res = paired_t_test(a, b)
    assert abs(res.t - paired_t_bruteforce(a, b)) < 1e-10
    ref = scipy.stats.ttest_rel(a, b)
    assert abs(res.p - ref.pvalue) < 1e-12 and res.dof == 5 and res.stars == "**"
    same = paired_t_test(a, a)
    assert same.degenerate and same.t == 0.0 and same.p == 1.0 and same.stars == ""
    const = paired_t_test(a + 1.0, a)
    assert const.degenerate and "zero variance" in const.note
    with pytest.raises(MetricError):
        paired_t_test([1.0], [2.0])


def test_significance_star_thresholds():
    rng = np.random.default_rng(0)
    a = rng.normal(size=8)
    for shift, stars in ((0.0, None), (5.0, "**")):
        res = paired_t_test(a + shift + rng.normal(scale=0.5, size=8), a)
        if stars:
            assert res.stars == stars
        assert res.stars == ("**" if res.p < 0.01 else "*" if res.p < 0.05 else "")


def test_report_io_and_tables(tmp_path):
    rep = MetricReport("PENN", ["t1", "t2"], [1.5, 2.5], [0.99, 0.97])
    assert rep.aggregate()["rmse_mean"] == 2.0
    write_metrics_csv(tmp_path / "m.csv", rep)
    back = read_metrics_csv(tmp_path / "m.csv", "PENN")
    assert back.rmse_deg == rep.rmse_deg and back.r2 == rep.r2 and back.trials == rep.trials
    other = MetricReport("Physics only", ["t1", "t2"], [3.0, 3.2], [0.9, 0.91])
    table = format_table([rep, other])
    assert "Average" in table and "PENN" in table and "Physics only" in table
    assert "Paired t-test" in format_comparison(rep, other)
    with pytest.raises(MetricError):
        MetricReport("x", ["a"], [-1.0], [0.5])
    with pytest.raises(MetricError):
        format_table([rep, MetricReport("y", ["z", "w"], [1, 1], [0, 0])])


def test_trajectory_csv(tmp_path):
    idx = np.arange(17, 20)
    est = Estimate(idx, np.radians([1.0, 2.0, 3.0]), np.radians([1.0, 2.0, 2.0]), np.radians([0, 0, 1.0]),
                   np.radians([1.0, 2.0, 3.0]), "free_running")
    write_trajectory_csv(tmp_path / "t.csv", est, 100.0)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "time_s,theta_deg,theta_phy_deg,theta_res_deg,theta_hat_deg"
    row = [float(v) for v in lines[3].split(",")]
    assert row[0] == pytest.approx(0.19) and row[1] == pytest.approx(3.0) and row[3] == pytest.approx(1.0)


def test_bruteforce_oracles_agree_on_small_case():
    a = [0.0, 0.1, 0.3]
    b = [0.0, 0.2, 0.1]
    assert abs(rmse(a, b) - rmse_deg_bruteforce(a, b)) < 1e-12
    assert abs(r_squared(a, b) - r2_bruteforce(a, b)) < 1e-12
