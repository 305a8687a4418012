import math

import numpy as np
import pytest

from switchpoint.models.empirical import (
    DemandSeries,
    EmpiricalFundamentals,
    _repair,
    build_empirical_fundamentals,
    chain_consistency,
    default_grid,
    estimate_discount_factor,
    export_csv,
    ingest_csv,
)
from switchpoint.models.exceptions import (
    EstimateQualityError,
    IngestError,
    InsufficientDataError,
    ParameterRangeError,
    ValidationError,
)
from switchpoint.models.fundamentals import DiffusionSpec, make_analytic_fundamentals
from switchpoint.models.simulate import sample_ou_path
from switchpoint.utils.enums import Provenance

RATE = 0.001
# MW per second on either flank of the triangle wave
RAMP = 20.0


def triangle_series(periods=60):
    """Excess demand bouncing linearly between 6000 and 4000 MW every 200 s."""
    t = np.arange(200 * periods + 1, dtype=float)
    values = 4000.0 + RAMP * np.abs(np.mod(t, 200.0) - 100.0)
    return DemandSeries.from_arrays(t, values)


@pytest.fixture(scope="module")
def triangle():
    return triangle_series()


@pytest.fixture(scope="module")
def triangle_fundamentals(triangle):
    grid = default_grid(triangle, levels=21)
    return build_empirical_fundamentals(triangle, grid, RATE, 5000.0)


def test_series_validation():
    with pytest.raises(ValidationError) as info:
        DemandSeries.from_arrays([0.0, 2.0, 1.0], [1.0, np.nan, 3.0])
    assert len(info.value.problems) == 2


def test_gaps_split_segments():
    t = np.concatenate([np.arange(10.0), 100.0 + np.arange(5.0)])
    series = DemandSeries.from_arrays(t, np.zeros_like(t))
    assert series.dt == 1.0
    assert series.segment_starts == (0, 10)
    assert series.gaps == ((10, 91.0),)
    assert [seg_t.size for seg_t, _ in series.segments()] == [10, 5]


def test_ingest_with_header_and_comments(tmp_path):
    path = tmp_path / "demand.csv"
    path.write_text(
        "# exported from the grid operator\n"
        "timestamp,value\n"
        "2024-01-01T00:00:00Z,100.5\n"
        "\n"
        "2024-01-01T00:01:00Z,-250\n"
        "2024-01-01T00:02:00Z,300\n"
    )
    series = ingest_csv(path)
    np.testing.assert_allclose(np.diff(series.timestamps), [60.0, 60.0])
    np.testing.assert_array_equal(series.values, [100.5, -250.0, 300.0])
    assert series.dt == 60.0


def test_ingest_epoch_seconds(tmp_path):
    path = tmp_path / "demand.csv"
    path.write_text("0,1\n60,2\n120,3\n")
    series = ingest_csv(path)
    np.testing.assert_array_equal(series.timestamps, [0.0, 60.0, 120.0])


@pytest.mark.parametrize(
    "text, line",
    [
        ("timestamp,value\n0,1\n60,abc\n", 3),
        ("timestamp,value\n0,1\n60,inf\n", 3),
        ("0,1\n60,2\n30,3\n", 3),
        ("timestamp,value\n2024-01-01T00:00:00Z,1\nyesterday,2\n", 3),
    ],
)
def test_ingest_reports_line(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(IngestError) as info:
        ingest_csv(path)
    assert info.value.line == line


def test_ingest_needs_two_rows(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("timestamp,value\n0,1\n")
    with pytest.raises(IngestError):
        ingest_csv(path)


def test_export_then_ingest(triangle, tmp_path):
    path = tmp_path / "triangle.csv"
    export_csv(triangle, path)
    restored = ingest_csv(path)
    np.testing.assert_array_equal(restored.timestamps, triangle.timestamps)
    np.testing.assert_array_equal(restored.values, triangle.values)


def test_rising_link_is_deterministic(triangle):
    estimate = estimate_discount_factor(triangle, 4500.0, 5300.0, RATE)
    assert estimate.mean == pytest.approx(math.exp(-RATE * 800.0 / RAMP), rel=1e-10)
    assert estimate.count == 60
    assert estimate.censored == 0
    assert not estimate.flagged


def test_falling_link_goes_over_the_peak(triangle):
    estimate = estimate_discount_factor(triangle, 5300.0, 4500.0, RATE)
    tau = (6000.0 - 5300.0 + 6000.0 - 4500.0) / RAMP
    assert estimate.mean == pytest.approx(math.exp(-RATE * tau), rel=1e-10)
    assert estimate.count == 59
    assert estimate.censored == 1
    assert estimate.censored_fraction == pytest.approx(1.0 / 60.0)


def test_same_level_is_certain(triangle):
    estimate = estimate_discount_factor(triangle, 5000.0, 5000.0, RATE)
    assert estimate.mean == 1.0
    assert estimate.se == 0.0


def test_estimate_validation(triangle):
    with pytest.raises(ValidationError):
        estimate_discount_factor(triangle, 5000.0, 7000.0, RATE)
    with pytest.raises(ValidationError):
        estimate_discount_factor(triangle, 5000.0, 5500.0, 0.0)


def test_chain_consistency_is_exact_for_additive_times(triangle):
    check = chain_consistency(triangle, 4200.0, 5000.0, 5800.0, RATE)
    assert check.product == pytest.approx(check.direct, rel=1e-12)
    with pytest.raises(ValidationError):
        chain_consistency(triangle, 5000.0, 4200.0, 5800.0, RATE)


def test_default_grid_spans_central_values(triangle):
    grid = default_grid(triangle, levels=11, coverage=0.98)
    assert grid.size == 11
    assert grid[0] == pytest.approx(4020.0, abs=5.0)
    assert grid[-1] == pytest.approx(5980.0, abs=5.0)


def test_triangle_fundamentals(triangle_fundamentals):
    pair = triangle_fundamentals
    grid = pair.grid
    assert pair.provenance is Provenance.EMPIRICAL
    assert pair.anchor == pytest.approx(5000.0, abs=1e-6)
    k = int(np.argmin(np.abs(grid - 5000.0)))
    assert pair.psi_hat[k] == pytest.approx(1.0)
    assert pair.phi_hat[k] == pytest.approx(1.0)

    np.testing.assert_allclose(
        np.diff(np.log(pair.psi_hat)), RATE * np.diff(grid) / RAMP, rtol=1e-8
    )
    np.testing.assert_allclose(
        np.diff(np.log(pair.phi_hat)), -RATE * (12000.0 - grid[:-1] - grid[1:]) / RAMP, rtol=1e-8
    )
    assert np.all(pair.up_counts == 60)
    assert np.all(pair.down_counts == 59)
    assert pair.flagged_links == []


def test_interpolated_pair(triangle_fundamentals):
    pair = triangle_fundamentals
    xs = np.linspace(pair.domain[0], pair.domain[1], 50)
    assert np.all(np.diff(pair.psi(xs)) > 0)
    assert np.all(np.diff(pair.phi(xs)) < 0)
    assert np.all(pair.dpsi(xs) > 0)
    assert np.all(pair.dphi(xs) < 0)
    assert np.all(pair.wronskian(xs) > 0)
    # log psi is linear on the triangle wave
    x = 5100.0
    assert pair.dpsi(x) / pair.psi(x) == pytest.approx(RATE / RAMP, rel=1e-6)
    with pytest.raises(ParameterRangeError):
        pair.psi(3000.0)


def test_json_file(triangle_fundamentals, tmp_path):
    path = tmp_path / "empirical.json"
    triangle_fundamentals.to_json(path)
    restored = EmpiricalFundamentals.from_json(path)
    np.testing.assert_array_equal(restored.psi_hat, triangle_fundamentals.psi_hat)
    assert restored.phi(5100.0) == pytest.approx(triangle_fundamentals.phi(5100.0))


def test_thin_links_are_rejected(triangle):
    grid = default_grid(triangle, levels=5)
    with pytest.raises(InsufficientDataError) as info:
        build_empirical_fundamentals(triangle, grid, RATE, 5000.0, min_count=100)
    assert info.value.details["required"] == 100


def test_threads_give_the_same_chain(triangle, triangle_fundamentals):
    grid = default_grid(triangle, levels=21)
    threaded = build_empirical_fundamentals(triangle, grid, RATE, 5000.0, threads=4)
    np.testing.assert_array_equal(threaded.psi_hat, triangle_fundamentals.psi_hat)


def test_monotone_repair():
    log_values = np.array([0.0, 0.3, 0.2, 0.5])
    np.testing.assert_allclose(_repair(log_values, True, 0.1, "psi"), [0.0, 0.25, 0.25, 0.5])
    with pytest.raises(EstimateQualityError) as info:
        _repair(log_values, True, 0.01, "psi")
    assert info.value.details["max_log_change"] == pytest.approx(0.05)


def test_grid_must_lie_in_observed_range(triangle):
    with pytest.raises(ValidationError):
        build_empirical_fundamentals(triangle, np.linspace(3000.0, 5000.0, 5), RATE, 4000.0)


@pytest.mark.slow
def test_estimates_track_analytic_fundamentals():
    spec = DiffusionSpec(1.0, 0.0, math.sqrt(2.0), 1.0, -10.0, 10.0)
    series = sample_ou_path(spec, 0.0, 1e-4, 10_000_000, seed=7)
    grid = np.linspace(-0.5, 0.5, 5)
    estimated = build_empirical_fundamentals(series, grid, spec.r, 0.0, min_count=30)
    analytic = make_analytic_fundamentals(spec)
    psi = analytic.psi(grid) / analytic.psi(0.0)
    phi = analytic.phi(grid) / analytic.phi(0.0)
    np.testing.assert_allclose(estimated.psi_hat, psi, rtol=0.1)
    np.testing.assert_allclose(estimated.phi_hat, phi, rtol=0.1)
