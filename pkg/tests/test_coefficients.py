import numpy as np
import pytest
from hypothesis import given, strategies as st

from eitlab.coefficients import Conductivity, PerturbationDirection
from eitlab.errors import ValidationError

values = st.lists(st.floats(0.01, 100.0), min_size=1, max_size=8)


@given(values)
def test_conductivity_is_frozen_and_keyed(v):
    s = Conductivity(v)
    assert not s.values.flags.writeable
    assert Conductivity(list(v)).key == s.key
    assert s.collar == v[0] and len(s.pixels) == len(v) - 1


@pytest.mark.parametrize("bad", [[], [1.0, 0.0], [1.0, -2.0], [np.nan], [np.inf]])
def test_conductivity_rejects(bad):
    with pytest.raises(ValidationError):
        Conductivity(bad)


def test_bounds_and_helpers():
    s = Conductivity.from_pixels(1.0, [0.5, 2.0], bounds=(0.5, 2.0))
    assert s.in_bounds()
    assert not Conductivity.from_pixels(1.0, [0.4], bounds=(0.5, 2.0)).in_bounds()
    assert Conductivity.constant(2.0, 3).values.tolist() == [2.0] * 4
    assert s.scaled(2.0).values.tolist() == [2.0, 1.0, 4.0]
    k = PerturbationDirection([1.0, -1.0])
    assert s.perturbed(k, 0.5).values.tolist() == [1.0, 1.0, 1.5]
    assert s.fingerprint != s.scaled(2.0).fingerprint


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6).filter(lambda v: max(map(abs, v)) > 1e-3),
       st.floats(-5, 5))
def test_direction_normalization(v, collar):
    k = PerturbationDirection(v, collar).normalized()
    assert k.sup_norm == pytest.approx(1.0)
    assert np.array_equal((-k).full, -k.full)
    assert np.allclose((k + k).full, 2 * k.full)


def test_direction_between():
    a = Conductivity([1.0, 2.0, 3.0])
    b = Conductivity([1.5, 1.0, 3.0])
    d = PerturbationDirection.between(a, b)
    assert d.collar == 0.5 and d.values.tolist() == [-1.0, 0.0]
    assert np.allclose(a.perturbed(d, 1.0).values, b.values)
    with pytest.raises(ValidationError):
        PerturbationDirection(np.zeros(3)).normalized()
