import math

import numpy as np
import pytest

from switchpoint.models.empirical import DemandSeries
from switchpoint.models.exceptions import ValidationError
from switchpoint.models.payoff import STORAGE
from switchpoint.models.simulate import (
    BacktestReport,
    backtest_series,
    bang_bang_schedule,
    grid_search_oracle,
    horizon_for,
    monte_carlo_value,
    ou_transition,
    run_strategy,
    sample_ou_path,
)
from switchpoint.models.solver import Schedule
from switchpoint.workers.functions import pool_mapper

RATE = 0.01
# F(x) = 0.001 x + 20, E = 0.9 F
TRACE = [5000.0, -100.0, 3000.0, 12000.0, 5000.0]
TRACE_J = -19.9 * math.exp(-RATE) + 28.8 * math.exp(-3 * RATE)


def trace_series(values=TRACE, start=0.0):
    return DemandSeries.from_arrays(start + np.arange(len(values), dtype=float), values)


def test_noiseless_transition_decays_to_mean():
    states = ou_transition(1000.0, 0.003, 5000.0, 0.0, 60.0, np.zeros(5))
    expected = 5000.0 + (1000.0 - 5000.0) * np.exp(-0.003 * 60.0 * np.arange(1, 6))
    np.testing.assert_allclose(states, expected, rtol=1e-12)


def test_paths_are_reproducible(ou_spec):
    first = sample_ou_path(ou_spec, 5000.0, 60.0, 100, seed=3)
    again = sample_ou_path(ou_spec, 5000.0, 60.0, 100, seed=3)
    other = sample_ou_path(ou_spec, 5000.0, 60.0, 100, seed=4)
    assert len(first) == 101
    assert first.values[0] == 5000.0
    np.testing.assert_array_equal(first.values, again.values)
    assert not np.array_equal(first.values, other.values)
    assert first.timestamps[-1] == pytest.approx(6000.0)


def test_path_request_validation(ou_spec):
    with pytest.raises(ValidationError):
        sample_ou_path(ou_spec, 5000.0, 0.0, 10)


def test_long_path_has_stationary_moments(ou_spec):
    series = sample_ou_path(ou_spec, ou_spec.theta, 60.0, 200_000, seed=11)
    assert series.values.mean() == pytest.approx(ou_spec.theta, abs=500.0)
    assert series.values.std() == pytest.approx(ou_spec.stationary_sd, rel=0.05)


def test_horizon_for():
    horizon = horizon_for(0.003)
    assert math.exp(-0.003 * horizon) == pytest.approx(1e-4)
    with pytest.raises(ValidationError):
        horizon_for(0.0)


def test_flat_series_never_trades(linear_payoff, linear_control):
    schedule = bang_bang_schedule(linear_control.a, linear_control.b)
    run = run_strategy(trace_series([5000.0] * 20), schedule, linear_payoff, 0, RATE)
    assert run.actions == []
    assert run.J == 0.0
    assert run.final_level == 0


def test_hand_traced_run(linear_payoff):
    schedule = bang_bang_schedule(0.0, 10000.0)
    run = run_strategy(trace_series(), schedule, linear_payoff, 0, RATE)
    assert [(a.time, a.from_level, a.to_level) for a in run.actions] == [(1.0, 0, 1), (3.0, 1, 0)]
    assert run.J == pytest.approx(TRACE_J, rel=1e-12)
    assert run.final_level == 0
    assert run.horizon == 4.0

    frame = run.to_frame()
    assert list(frame.columns) == ["time", "x", "from_level", "to_level", "cashflow"]
    assert frame["cashflow"].sum() == pytest.approx(TRACE_J)


def test_origin_shift_discounts_whole_run(linear_payoff):
    schedule = bang_bang_schedule(0.0, 10000.0)
    run = run_strategy(trace_series(), schedule, linear_payoff, 0, RATE, origin=-10.0)
    assert run.J == pytest.approx(TRACE_J * math.exp(-10.0 * RATE), rel=1e-12)


def test_start_level_and_rate_checked(linear_payoff):
    schedule = bang_bang_schedule(0.0, 10000.0)
    with pytest.raises(ValidationError):
        run_strategy(trace_series(), schedule, linear_payoff, 2, RATE)
    with pytest.raises(ValidationError):
        run_strategy(trace_series(), schedule, linear_payoff, 0, 0.0)


def test_crossed_thresholds_never_reach_the_strategy():
    with pytest.raises(ValidationError, match="violated at levels"):
        bang_bang_schedule(6000.0, 4000.0)


def test_levels_chain_within_one_sample(storage_payoff):
    schedule = Schedule(
        np.array([0.0, 0.5, 1.0]),
        np.array([-500.0, -2000.0]),
        np.array([8000.0, 8500.0]),
        np.zeros(3),
        np.zeros(3),
        STORAGE,
    )
    run = run_strategy(trace_series([0.0, -1000.0, -3000.0, 9000.0]), schedule, storage_payoff, 0, RATE)
    assert [(a.from_level, a.to_level) for a in run.actions] == [(0, 1), (1, 2), (2, 1), (1, 0)]
    # the second charge pays the half-full storage premium Z_f = 2
    expected = (
        -19.0 * math.exp(-RATE)
        - 2.0 * 17.0 * math.exp(-2 * RATE)
        + 2 * 26.1 * math.exp(-3 * RATE)
    )
    assert run.J == pytest.approx(expected, rel=1e-12)
    # the full store does not charge again
    full = run_strategy(trace_series([0.0, -5000.0]), schedule, storage_payoff, 2, RATE)
    assert full.actions == []


def test_backtest_over_segments(linear_payoff):
    t = np.array([0.0, 1.0, 2.0, 3.0, 100.0, 101.0, 102.0, 103.0])
    values = np.array([5000.0, -100.0, 3000.0, 12000.0, 5000.0, 5000.0, 5000.0, 5000.0])
    series = DemandSeries.from_arrays(t, values)
    report = backtest_series(series, bang_bang_schedule(0.0, 10000.0), linear_payoff, 0, RATE)
    assert report.n_paths == 2
    assert report.mean == pytest.approx(TRACE_J / 2.0)
    assert report.max == pytest.approx(TRACE_J)
    assert report.min == 0.0
    assert report.horizon == 3.0
    assert report.source == "series"


def test_report_statistics():
    report = BacktestReport.from_values([1.0, 2.0, 3.0], 100.0, 0.5, 7, "simulated")
    assert report.mean == 2.0
    assert report.std == pytest.approx(1.0)
    assert report.se == pytest.approx(1.0 / math.sqrt(3.0))
    assert report.to_dict()["seed"] == 7


def test_monte_carlo_mapper_does_not_change_result(ou_spec, linear_payoff, linear_control):
    schedule = bang_bang_schedule(linear_control.a, linear_control.b)
    kwargs = dict(dt=60.0, n_paths=6, seed=5, horizon=3600.0, batch_size=2)
    serial = monte_carlo_value(ou_spec, schedule, linear_payoff, ou_spec.theta, 0, **kwargs)
    pooled = monte_carlo_value(
        ou_spec, schedule, linear_payoff, ou_spec.theta, 0, mapper=pool_mapper(2), **kwargs
    )
    assert serial == pooled
    assert serial.n_paths == 6
    assert serial.tail_bound > 0


def test_monte_carlo_path_count(ou_spec, linear_payoff):
    with pytest.raises(ValidationError):
        monte_carlo_value(ou_spec, bang_bang_schedule(0.0, 10000.0), linear_payoff, 5000.0, 0, 60.0, 0)


def test_oracle_single_cell(ou_spec, linear_payoff):
    result = grid_search_oracle(ou_spec, linear_payoff, [0.0], [10000.0], n_paths=2, horizon=600.0, seed=1)
    assert result.best == (0.0, 10000.0)
    assert np.isfinite(result.best_J)
    assert result.unimodal_a and result.unimodal_b
    assert len(result.to_frame()) == 1


def test_oracle_needs_a_feasible_cell(ou_spec, linear_payoff):
    with pytest.raises(ValidationError, match="Empty oracle grid"):
        grid_search_oracle(ou_spec, linear_payoff, [10.0], [5.0], n_paths=2)


@pytest.mark.slow
def test_optimal_pair_beats_perturbed_pairs(ou_spec, linear_payoff, linear_control):
    a, b = linear_control.a, linear_control.b
    result = grid_search_oracle(
        ou_spec,
        linear_payoff,
        [a - 500.0, a, a + 500.0],
        [b - 500.0, b, b + 500.0],
        n_paths=400,
        dt=10.0,
        seed=2024,
        mapper=pool_mapper(4),
    )
    centre = result.J[1, 1]
    assert centre >= np.nanmax(result.J) - 3.0 * np.nanmax(result.se)
