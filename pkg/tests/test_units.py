from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from eprcoinc.units import ns_to_ps, ps_to_ns


@pytest.mark.parametrize("ns, ps", [("1.8", 1800), ("-20.5", -20500), ("25", 25000),
                                    (0.5, 500), (3, 3000), (Decimal("0.001"), 1)])
def test_exact_conversion(ns, ps):
    assert ns_to_ps(ns) == ps


def test_sub_ps_rejected():
    with pytest.raises(ValueError):
        ns_to_ps("0.0005")


@given(st.integers(-10**15, 10**15))
def test_round_trip(ps):
    assert ns_to_ps(Decimal(ps) / 1000) == ps
    assert ps_to_ns(ps) == pytest.approx(ps / 1000)
