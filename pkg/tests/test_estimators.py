import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from expem.estimators import (
    CSV_COLUMNS,
    ConvergenceTable,
    ErrorEstimate,
    convergence_table,
    empirical_moment,
    exponential_moment,
    fit_rate,
    jackknife,
    local_error,
    mean_sojourn_time,
    moment_sweep,
    pathwise_relative_error,
    sojourn_time,
    strong_error,
)
from expem.exceptions import DomainError, UnsupportedModelError
from expem.paths import make_grid, sample_increments
from expem.presets import preset
from expem.scheme import Trajectory, TrajectoryBatch, simulate_batch


def _row(q, err):
    return ErrorEstimate(q=q, dt=2.0**-q, l2_sup=err, l2_terminal=err, l2_sup_stopped=err,
                         variance=0.0, n_traj=1, n_overflow=0, n_stopped=0)


def _const_traj(c, q=4, stop=None):
    g = make_grid(1.0, q)
    return Trajectory(g, np.full(g.n_steps + 1, float(c)), "exp-em", stop)


# --- rate fit ---------------------------------------------------------------------


def test_fit_rate_exact_half():
    slope, intercept = fit_rate([_row(q, 2.0 ** (-q / 2)) for q in range(4, 12)])
    assert slope == pytest.approx(0.5, abs=1e-12)
    assert intercept == pytest.approx(0.0, abs=1e-10)


def test_fit_rate_flat():
    assert fit_rate([_row(q, 0.3) for q in range(3, 9)])[0] == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_printed_case1_column():
    # Case 1 row of the published error table, q = 10..20
    printed = [7.04e-03, 5.02e-03, 3.58e-03, 2.55e-03, 1.81e-03, 1.28e-03, 9.02e-04, 6.29e-04,
               4.30e-04, 2.82e-04, 1.63e-04]
    slope, intercept = fit_rate([_row(q, e) for q, e in zip(range(10, 21), printed)])
    # numpy.polyfit on the same points
    assert slope == pytest.approx(0.52722739, abs=1e-8)
    assert intercept == pytest.approx(-1.7785276, abs=1e-7)
    # the endpoint ratio log2(e_10 / e_20) / 10 is the often-quoted 0.543
    assert math.log2(printed[0] / printed[-1]) / 10 == pytest.approx(0.5433, abs=1e-4)


def test_fit_rate_drops_bad_rows():
    rows = [_row(q, 2.0 ** (-q / 2)) for q in range(4, 8)] + [_row(8, 0.0), _row(9, math.nan)]
    with pytest.warns(RuntimeWarning):
        slope, _ = fit_rate(rows)
    assert slope == pytest.approx(0.5)


def test_fit_rate_needs_two_rows():
    with pytest.raises(DomainError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit_rate([_row(4, 0.1), _row(5, 0.0)])


@given(st.floats(0.1, 2.0), st.floats(-5, 5))
def test_fit_rate_recovers_any_line(rate, c):
    slope, intercept = fit_rate([_row(q, 2.0 ** (c - rate * q)) for q in range(2, 10)])
    assert slope == pytest.approx(rate, abs=1e-9)
    assert intercept == pytest.approx(c, abs=1e-8)


# --- jackknife --------------------------------------------------------------------


def test_jackknife_mean_se():
    # for the plain mean with equal groups the jackknife s.e. is the s.e. of group means
    rng = np.random.default_rng(0)
    x = rng.normal(size=2000)
    est, se = jackknife(x, np.ones_like(x, dtype=bool), lambda m: m)
    groups = x.reshape(20, 100).mean(axis=1)
    assert est == pytest.approx(x.mean(), abs=1e-13)
    assert se == pytest.approx(groups.std(ddof=1) / math.sqrt(20), rel=1e-10)


def test_jackknife_too_few_samples():
    est, se = jackknife(np.ones(5), np.ones(5, dtype=bool), math.sqrt)
    assert est == 1.0 and math.isnan(se)


# --- strong errors ----------------------------------------------------------------


def test_self_comparison_is_zero():
    e = strong_error(preset("case1"), 6, 6, 40, seed=1)
    assert (e.l2_sup, e.l2_terminal, e.l2_sup_stopped, e.variance) == (0.0, 0.0, 0.0, 0.0)


def test_gbm_errors_are_float_noise():
    e = strong_error(preset("gbm"), 5, 10, 64, seed=3)
    assert e.l2_sup <= 1e-10


def test_strong_error_domain():
    with pytest.raises(DomainError):
        strong_error(preset("case1"), 6, 8, 0)
    with pytest.raises(DomainError):
        strong_error(preset("case1"), 9, 8, 10)
    with pytest.raises(DomainError):
        convergence_table(preset("case1"), [4], 6, 10, p=0)


def test_exact_reference_needs_closed_form():
    with pytest.raises(UnsupportedModelError):
        convergence_table(preset("case1"), [4], 6, 10, reference="exact")


@pytest.fixture(scope="module")
def small_table():
    return convergence_table(preset("case6"), range(3, 7), 9, 60, seed=11, batch_size=16)


def test_table_invariants(small_table):
    assert [r.q for r in small_table.rows] == [3, 4, 5, 6]
    for r in small_table.rows:
        assert r.l2_sup >= r.l2_terminal >= 0
        assert r.l2_sup_stopped <= r.l2_sup
        assert r.n_traj == 60
        assert r.dt == 2.0**-r.q
        assert r.l2_sup_se >= 0


def test_norm_monotone_in_p():
    m = preset("case5")
    e1 = strong_error(m, 5, 9, 50, p=1, seed=2)
    e2 = strong_error(m, 5, 9, 50, p=2, seed=2)
    assert e2.l2_sup >= e1.l2_sup
    assert e2.l2_terminal >= e1.l2_terminal


def test_thread_count_does_not_change_result():
    m = preset("case6")
    a = convergence_table(m, [4, 5], 8, 70, seed=5, threads=1, batch_size=8)
    b = convergence_table(m, [4, 5], 8, 70, seed=5, threads=3, batch_size=8)
    assert a.to_json() == b.to_json()


def test_batch_size_does_not_change_result():
    m = preset("case6")
    a = convergence_table(m, [4, 5], 8, 70, seed=5, batch_size=8)
    b = convergence_table(m, [4, 5], 8, 70, seed=5, batch_size=64)
    assert a.to_json() == b.to_json()


def test_coarse_levels_independent_of_list():
    # each level's estimate depends only on (seed, q, q_ref), not on the other levels
    m = preset("case1")
    both = convergence_table(m, [4, 6], 8, 30, seed=9)
    single = convergence_table(m, [4], 8, 30, seed=9)
    assert both.rows[0] == single.rows[0]


def test_stopped_error_uses_coarse_exit():
    # Case 6 at a very coarse level exits the threshold on some paths
    t = convergence_table(preset("case6"), [2], 8, 200, seed=4, fit=False)
    r = t.rows[0]
    assert r.n_stopped > 0
    assert r.l2_sup_stopped <= r.l2_sup


def test_csv_shape_and_format(small_table):
    text = small_table.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 5
    cells = lines[1].split(",")
    assert cells[0] == "3" and cells[1] == "1.25e-01"
    assert cells[6] == "60"


def test_json_roundtrip(small_table):
    text = small_table.to_json()
    back = ConvergenceTable.from_json(text)
    assert back.to_json() == text
    assert json.loads(text)["rows"][0]["q"] == 3


def test_overflow_warning_threshold():
    rows = ErrorEstimate(q=1, dt=0.5, l2_sup=1, l2_terminal=1, l2_sup_stopped=1, variance=0,
                         n_traj=10, n_overflow=0, n_stopped=0)
    assert rows.valid


# --- local error and oracles ------------------------------------------------------


def test_local_error_scales_like_sqrt_dt():
    m = preset("case1")
    ratios = [local_error(m, q, 200, seed=1) / 2 ** (-q / 2) for q in (4, 6, 8)]
    assert max(ratios) / min(ratios) < 3


def test_local_error_gbm_closed_form():
    # GBM with B1 = Sigma^2/2: the mid-step gap is X_t (exp(Sigma dW_{h/2}) - 1) with dW
    # independent of X_t, so the L2 norm is sqrt(E X_t^2) * sqrt(E (e^{Sigma dW} - 1)^2),
    # largest at the last node t = T - h
    m = preset("gbm").replace(B1=0.125)
    h, s = 2.0**-10, 0.5
    exact = math.sqrt(math.exp((2 * 0.125 + s * s) * (1 - h))) * math.sqrt(
        math.exp(s * s * h) - 2 * math.exp(s * s * h / 4) + 1)
    assert local_error(m, 10, 4000, seed=3) == pytest.approx(exact, rel=0.1)


def test_pathwise_relative_error_gbm():
    assert pathwise_relative_error(preset("gbm"), 8, 50) <= 1e-12
    with pytest.raises(UnsupportedModelError):
        pathwise_relative_error(preset("case1"), 4, 2)


# --- moments ----------------------------------------------------------------------


def test_moment_of_constant_path():
    t = _const_traj(1.7)
    assert empirical_moment(t, 2) == pytest.approx(1.7**2, rel=1e-15)
    assert empirical_moment(t, -3) == pytest.approx(1.7**-3, rel=1e-15)
    assert empirical_moment(t, 2, at="sup") == pytest.approx(1.7**2, rel=1e-15)
    assert empirical_moment(t, 2, at="per-node-max") == pytest.approx(1.7**2, rel=1e-15)


def test_moment_selectors():
    g = make_grid(1.0, 2)
    b = TrajectoryBatch(g, np.array([[1.0, 3.0, 2.0, 0.5, 1.0], [2.0, 1.0, 1.0, 1.0, 1.0]]),
                        "exp-em", np.array([1, -1]), np.zeros(2, dtype=bool))
    assert empirical_moment(b, 1) == 1.0
    assert empirical_moment(b, 1, at="sup") == 2.5
    assert empirical_moment(b, 1, at="per-node-max") == 2.0
    # stopped: first path frozen at 3 after node 1
    assert empirical_moment(b, 1, stopped=True) == 2.0
    with pytest.raises(DomainError):
        empirical_moment(b, 1, at="median")


def test_negative_moment_of_zero_rejected():
    with pytest.raises(DomainError):
        empirical_moment(_const_traj(0.0), -1)


def test_gbm_second_moment():
    # E[X_T^2] = x0^2 exp((2 B1 + Sigma^2) T)
    m = preset("gbm")
    r = moment_sweep(m, 6, 100_000, seed=8, p=1, mu=0.0)
    exact = math.exp(2 * m.B1 + m.Sigma**2)
    assert abs(r.moment - exact) <= 3 * r.moment_se
    assert r.exp_moment_stopped == 1.0


def test_moment_sweep_matches_batch_estimators():
    m = preset("case6")
    g = make_grid(1.0, 5)
    b = simulate_batch(m, g, sample_increments(2, np.arange(30), g.n_steps, g.dt))
    r = moment_sweep(m, 5, 30, seed=2, p=1, kappa=2.0, mu=0.5, batch_size=7)
    assert r.moment == pytest.approx(empirical_moment(b, 2), rel=1e-13)
    assert r.neg_moment_stopped == pytest.approx(empirical_moment(b, -2, stopped=True), rel=1e-13)
    assert r.exp_moment_stopped == pytest.approx(exponential_moment(b, 0.5, 2.0), rel=1e-13)


def test_exponential_moment_trivial_cases():
    assert exponential_moment(_const_traj(2.0), 0.0, 2.0) == 1.0
    # constant path, no stop: exp(mu T c^{beta-1})
    assert exponential_moment(_const_traj(1.3), 0.4, 2.0) == pytest.approx(
        math.exp(0.4 * 1.3**2), rel=1e-14)


def test_exponential_moment_stops_the_integral():
    # stopped at node 4 of 16: only the first quarter of the horizon counts
    assert exponential_moment(_const_traj(1.0, stop=4), 1.0, 2.0) == pytest.approx(
        math.exp(0.25), rel=1e-14)


def test_exponential_moment_stopping_keeps_it_finite():
    big = TrajectoryBatch.from_trajectories([_const_traj(30.0, stop=0), _const_traj(1.0)])
    assert exponential_moment(big, 1.0, 2.0) == pytest.approx(0.5 * (1 + math.e), rel=1e-14)
    unstopped = TrajectoryBatch.from_trajectories([_const_traj(30.0), _const_traj(1.0)])
    assert exponential_moment(unstopped, 1.0, 2.0) == math.inf


# --- sojourn ----------------------------------------------------------------------


def test_sojourn_trivial():
    assert sojourn_time(_const_traj(5.0), 1.5, 0.1) == 0.0
    assert sojourn_time(_const_traj(1.5), 1.5, 0.1) == 1.0
    with pytest.raises(DomainError):
        sojourn_time(_const_traj(1.5), 1.5, 0.0)


def test_sojourn_counts_whole_steps_only():
    g = make_grid(1.0, 2)
    t = Trajectory(g, np.array([1.5, 1.55, 2.0, 1.5, 1.52]), "exp-em")
    # steps 0 and 3 have both endpoints inside
    assert sojourn_time(t, 1.5, 0.1) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 2.0), min_size=3, max_size=40), st.data())
def test_sojourn_additive(values, data):
    n = len(values) - 1
    g = make_grid(float(n), 0).__class__(float(n), n)  # unit steps
    full = Trajectory(g, np.array(values), "exp-em")
    cut = data.draw(st.integers(1, n - 1)) if n > 1 else 1
    left = Trajectory(g.__class__(float(cut), cut), np.array(values[: cut + 1]), "exp-em")
    right = Trajectory(g.__class__(float(n - cut), n - cut), np.array(values[cut:]), "exp-em")
    total = sojourn_time(full, 1.5, 0.2)
    assert total == sojourn_time(left, 1.5, 0.2) + sojourn_time(right, 1.5, 0.2)


def test_mean_sojourn_matches_single():
    m = preset("case8")
    g = make_grid(1.0, 8)
    b = simulate_batch(m, g, sample_increments(0, np.arange(20), g.n_steps, g.dt))
    expected = np.mean([sojourn_time(b[i], 1.5, 0.3) for i in range(20)])
    assert mean_sojourn_time(b, 1.5, 0.3) == pytest.approx(expected, rel=1e-14)
