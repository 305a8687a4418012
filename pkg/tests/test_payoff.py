import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from switchpoint.models.exceptions import FactorDomainError, ValidationError
from switchpoint.models.payoff import (
    STORAGE,
    AffinePayoff,
    BoundFactor,
    CallableFactor,
    ConstantFactor,
    ExponentialFactor,
    LinearBasePayoff,
    LinearFactor,
    PayoffModel,
    TemperaturePayoff,
    build_preset,
    check_well_posed,
    eval_E,
    eval_F,
    factor_ratio_derivative,
    storage_factors,
)
from switchpoint.utils.enums import PayoffPreset, Side


def test_linear_prices():
    base = LinearBasePayoff()
    assert base.F(-20000.0) == pytest.approx(0.0)
    assert base.F(10000.0) == pytest.approx(30.0)
    assert base.E(10000.0) == pytest.approx(27.0)
    assert float(base.dE(0.0)) == pytest.approx(0.0009)
    assert float(base.d2F(3.0)) == pytest.approx(0.0)


def test_linear_rejects_bad_efficiency():
    with pytest.raises(ValidationError, match="efficiency"):
        LinearBasePayoff(efficiency=1.5)


def test_temperature_price_at_cold_edge():
    payoff = TemperaturePayoff(5.0)
    assert float(payoff.F(-40000.0)) == pytest.approx(-7.625)
    assert float(payoff.dF(0.0)) == pytest.approx(0.001 * (1.0 + 225.0 / 1500.0))
    assert float(payoff.E(-40000.0)) == pytest.approx(0.9 * -7.625)


@given(st.floats(min_value=-40000.0, max_value=50000.0))
def test_reference_temperature_is_linear(x):
    assert float(TemperaturePayoff(20.0).F(x)) == pytest.approx(float(LinearBasePayoff().F(x)), abs=1e-9)


@given(
    st.floats(min_value=-40000.0, max_value=50000.0),
    st.floats(min_value=5.0, max_value=20.0),
    st.floats(min_value=5.0, max_value=20.0),
)
def test_colder_months_raise_prices(x, t_cold, t_warm):
    assume(t_cold + 0.01 <= t_warm)
    cold, warm = TemperaturePayoff(t_cold), TemperaturePayoff(t_warm)
    assert cold.F(x) > warm.F(x)
    assert cold.E(x) > warm.E(x)


@pytest.mark.parametrize("temperature", [4.9, 20.5, float("nan")])
def test_temperature_outside_range(temperature):
    with pytest.raises(ValidationError):
        TemperaturePayoff(temperature)


def test_with_temperature_keeps_base():
    cold = TemperaturePayoff(20.0, base=LinearBasePayoff(0.002, 10.0, 0.8)).with_temperature(10.0)
    assert cold.temperature == 10.0
    assert cold.base.slope == 0.002


def test_affine_payoff():
    base = AffinePayoff(0.001, 20.0, 0.0008, 15.0)
    assert base.F(1000.0) == pytest.approx(21.0)
    assert base.E(1000.0) == pytest.approx(15.8)
    assert float(base.dE(1000.0)) == pytest.approx(0.0008)


def test_storage_factors():
    charge, discharge = storage_factors(z_n=2.0)
    assert float(charge(0.0)) == pytest.approx(1.0)
    assert float(charge(2.0)) == pytest.approx(3.0)
    assert float(charge.deriv(1.0)) == pytest.approx(1.0)
    assert float(discharge(1.3)) == pytest.approx(1.0)
    assert float(discharge.deriv(1.3)) == pytest.approx(0.0)
    assert charge.domain == (0.0, 2.0)


def test_factor_curves_validate():
    with pytest.raises(ValidationError):
        ConstantFactor(0.0)
    with pytest.raises(ValidationError):
        LinearFactor(intercept=1.0, slope=-2.0)


def test_exponential_factor_derivative():
    curve = ExponentialFactor(2.0, 0.5)
    assert float(curve.deriv(1.0)) == pytest.approx(0.5 * 2.0 * np.exp(0.5))


def test_callable_factor_differentiates_numerically():
    curve = CallableFactor(lambda y: 1.0 + y**2)
    assert float(curve.deriv(0.5)) == pytest.approx(1.0, rel=1e-6)
    explicit = CallableFactor(lambda y: 1.0 + y**2, lambda y: 2.0 * y)
    assert float(explicit.deriv(0.5)) == pytest.approx(1.0)


def test_factor_ratio_derivative():
    charge, discharge = storage_factors()
    d_ef, d_fe = factor_ratio_derivative(charge, discharge, 0.5)
    # Z_f = 1 + 2y, Z_e = 1
    assert d_ef == pytest.approx(-2.0 / 4.0)
    assert d_fe == pytest.approx(2.0)


def test_factor_ratio_derivative_empty_store():
    d_ef, d_fe = factor_ratio_derivative(*storage_factors(z_n=1.0), 0.0)
    assert d_ef == -2.0
    assert d_fe == 2.0


def test_factor_ratio_derivative_outside_domain():
    charge, discharge = storage_factors()
    with pytest.raises(FactorDomainError) as info:
        factor_ratio_derivative(charge, discharge, 1.5)
    assert info.value.details["domain"] == [0.0, 1.0]


def test_composed_model_scales_charge_side(storage_payoff):
    empty = storage_payoff.with_value(STORAGE, 0.0)
    half = storage_payoff.with_value(STORAGE, 0.5)
    assert eval_F(half, 1000.0) == pytest.approx(2.0 * eval_F(empty, 1000.0))
    assert eval_E(half, 1000.0) == pytest.approx(eval_E(empty, 1000.0))
    assert float(half.dF(0.0)) == pytest.approx(0.002)


def test_with_values_sets_sides_separately(storage_payoff):
    model = storage_payoff.with_values(STORAGE, 0.25, 0.75)
    assert model.charge_factors[0].value == 0.25
    assert model.discharge_factors[0].value == 0.75
    assert model.side_scale(Side.CHARGE) == pytest.approx(1.5)
    assert model.side_scale(Side.CHARGE, exclude=STORAGE) == pytest.approx(1.0)


def test_factor_value_outside_domain(storage_payoff):
    with pytest.raises(FactorDomainError):
        storage_payoff.with_value(STORAGE, 1.2).F(0.0)


def test_unknown_factor(storage_payoff):
    with pytest.raises(ValidationError):
        storage_payoff.curves("humidity")
    with pytest.raises(ValidationError):
        storage_payoff.value_of("humidity")


def test_missing_side_is_constant_one():
    curve = LinearFactor(1.0, 1.0, Side.DISCHARGE)
    model = PayoffModel(LinearBasePayoff(), (), (BoundFactor("wind", curve, 0.5),))
    charge, discharge = model.curves("wind")
    assert float(charge(0.3)) == pytest.approx(1.0)
    assert discharge is curve


def test_well_posed_linear(linear_payoff):
    report = check_well_posed(linear_payoff, np.linspace(-40000.0, 50000.0, 91))
    assert report.passed
    assert report.max_gap < 0
    # F <= 0 below -20000 MW
    assert report.negative_price_points == 21
    assert report.sampled == 91


def test_well_posed_fails_when_income_exceeds_cost():
    model = PayoffModel(AffinePayoff(0.001, 20.0, 0.001, 25.0))
    report = check_well_posed(model, np.linspace(-1000.0, 1000.0, 5))
    assert not report.passed
    assert report.max_gap == pytest.approx(5.0)


@pytest.mark.parametrize(
    "preset, factors, base",
    [
        (PayoffPreset.LINEAR, set(), LinearBasePayoff),
        ("storage-linear", {STORAGE}, LinearBasePayoff),
        ("temperature", set(), TemperaturePayoff),
        (PayoffPreset.COMPOSED, {STORAGE}, TemperaturePayoff),
    ],
)
def test_presets(preset, factors, base):
    model = build_preset(preset)
    assert model.factor_names() == factors
    assert isinstance(model.base, base)


def test_unknown_preset():
    with pytest.raises(ValueError):
        build_preset("hydro")
