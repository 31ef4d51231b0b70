import numpy as np
import pytest
from hypothesis import given, strategies as st

from arm_lab.errors import DomainError
from arm_lab.params import (ExponentKind, Intensity, Kappa, alpha_from_kappa, predicted_exponent,
                            xi4_boundary, xi4_interior)

kappas = st.floats(min_value=8 / 3, max_value=4.0, exclude_min=True)


def test_alpha_examples():
    assert alpha_from_kappa(4).value == 0.5
    assert alpha_from_kappa(Kappa(3.0)).value == pytest.approx(0.25, abs=1e-15)


def test_kappa_lower_endpoint_rejected():
    with pytest.raises(DomainError):
        alpha_from_kappa(8 / 3)
    with pytest.raises(DomainError):
        Kappa(4.0001)


def test_intensity_range():
    Intensity(0.0)
    Intensity(0.5)
    with pytest.raises(DomainError):
        Intensity(0.51)
    with pytest.raises(DomainError):
        Intensity(-0.1)


@pytest.mark.parametrize("kind,j,k,expected", [
    (ExponentKind.INTERIOR_2J, 2, 4, 2.0),
    (ExponentKind.INTERIOR_2J, 1, 4, 0.5),
    (ExponentKind.BOUNDARY_2J, 1, 4, 1.0),
    (ExponentKind.BOUNDARY_2J, 2, 4, 4.0),
    (ExponentKind.BOUNDARY_2J_MINUS_1, 1, 3.3, 0.0),
    (ExponentKind.INTERIOR_2J, 1, 3, 0.625),
])
def test_exponent_examples(kind, j, k, expected):
    assert predicted_exponent(kind, j, k) == pytest.approx(expected, abs=1e-14)


def test_j_zero_rejected():
    with pytest.raises(DomainError):
        predicted_exponent(ExponentKind.INTERIOR_2J, 0, 4)


def test_alpha_strictly_increasing():
    k = np.linspace(8 / 3 + 1e-9, 4, 2001)
    a = np.array([alpha_from_kappa(v).value for v in k])
    assert np.all(np.diff(a) > 0)
    assert 0 < a[0] < 1e-6 and a[-1] == 0.5


def test_j2_matches_four_arm_closed_forms():
    rs = np.random.default_rng(1)
    for k in rs.uniform(8 / 3, 4, 1000):
        if k <= 8 / 3:
            continue
        assert predicted_exponent("Interior2j", 2, k) == pytest.approx(xi4_interior(k), rel=1e-13)
        assert predicted_exponent("Boundary2j", 2, k) == pytest.approx(xi4_boundary(k), rel=1e-13)


@given(kappas, st.integers(min_value=1, max_value=20), st.sampled_from(list(ExponentKind)))
def test_exponents_nonnegative(k, j, kind):
    assert predicted_exponent(kind, j, k) >= 0
