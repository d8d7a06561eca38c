from fractions import Fraction

import pytest

from mfgcap.units import UnitSyntaxError, parse_unit


@pytest.mark.parametrize("expr, factor", [
    ("GW", 1e3), ("kW", 1e-3), ("MW", 1.0), ("$/kW", 1e3), ("k$/MW", 1e3),
    ("MW^2/($*year)", 1.0), ("$/(MW*MWh)", 1.0), ("$/kWh", 1e3), ("1/year", 1.0),
])
def test_factors(expr, factor):
    f, _ = parse_unit(expr)
    assert f == pytest.approx(factor, rel=1e-15)


def test_dimensions_of_beta_inverse():
    _, dims = parse_unit("MW^2/($*year)")
    assert dims == {"MW": 2, "$": -1, "year": -1}


def test_fractional_power():
    f, dims = parse_unit("1/year^(1/2)")
    assert f == 1.0
    assert dims == {"year": Fraction(-1, 2)}
    assert parse_unit("1/sqrt(year)")[1] == dims


@pytest.mark.parametrize("bad", ["furlong", "MW^", "(MW", "MW)", "$/"])
def test_rejects_garbage(bad):
    with pytest.raises(UnitSyntaxError):
        parse_unit(bad)
