import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobomap.energy import (CSV_FIELDS, Ball, Box, as_domain, diverging, fractional_derivative_at,
                            gagliardo_seminorm_p, grad_energy, lp_norm_p, wsp_distance, wsp_norm_p)
from sobomap.fields import constant_field, linear_field, radial_field, step_field


def test_domains():
    assert as_domain("cube", 3).volume == pytest.approx(8.0)
    assert as_domain("disk", 2).volume == pytest.approx(math.pi)
    assert isinstance(as_domain(Box((0, 0), (1, 1)), 2), Box)
    with pytest.raises(ValueError):
        as_domain("torus", 2)


def test_lp_of_constant_and_linear():
    assert lp_norm_p(constant_field(2, [1.0, 0.0]), 2.0).value == pytest.approx(4.0, rel=1e-9)
    # integral of x_1^2 over the square
    rep = lp_norm_p(linear_field([[1.0, 0.0]]), 2.0)
    assert rep.value == pytest.approx(4 / 3, rel=1e-6)
    mc = lp_norm_p(linear_field([[1.0, 0.0]]), 2.0, estimator="monte-carlo", samples=200_000, rng=1)
    assert abs(mc.value - 4 / 3) < 4 * mc.stderr


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(1.0, 3.0))
def test_gradient_energy_of_linear_maps(entries, p):
    A = np.array(entries).reshape(2, 2)
    rep = grad_energy(linear_field(A), 1, p, estimator="tensor-grid")
    assert rep.value == pytest.approx(4.0 * np.linalg.norm(A) ** p, rel=1e-9, abs=1e-12)


def test_vortex_energy_at_one_exponent():
    rep = grad_energy(radial_field(2), 1, 1.5, domain="disk", estimator="monte-carlo", samples=100_000, rng=0)
    assert rep.value == pytest.approx(2 * math.pi / 0.5, rel=0.02)


def test_non_integrable_vortex_is_refused_by_the_grid():
    with pytest.raises(ValueError):
        grad_energy(radial_field(2), 1, 2.0, domain="disk", estimator="tensor-grid")


def test_gagliardo_exact_for_the_identity_on_an_interval():
    # |x - y|^2 / |x - y|^(1 + 2 sigma) = |x - y|^(1 - 2 sigma) on [-1, 1]^2
    # sigma = 1/2 integrates 1; sigma = 1/4 gives 2^(5/2) (4/3 - 4/5)
    u = linear_field([[1.0]])
    half = gagliardo_seminorm_p(u, 0.5, 2.0, samples=200_000, rng=3)
    assert abs(half.value - 4.0) < 4 * half.stderr + 1e-9
    quarter = gagliardo_seminorm_p(u, 0.25, 2.0, samples=200_000, rng=3)
    exact = 2 ** 2.5 * (4 / 3 - 4 / 5)
    assert abs(quarter.value - exact) < 4 * quarter.stderr
    assert quarter.value == pytest.approx(exact, rel=0.02)


def test_fractional_derivative_of_a_jump():
    # 2 * integral over (-1, 0) of |0.5 - y|^(-3/2), evaluated independently
    val = fractional_derivative_at(step_field(1), 0.5, 1.0, [0.5], samples=400_000, rng=2)
    assert val == pytest.approx(2.390867925781476, rel=0.02)


def test_distance_to_itself_is_zero_and_norm_of_constant():
    u = radial_field(2)
    assert wsp_distance(u, u, 1.0, 1.5, samples=2000, rng=0).value == 0.0
    rep = wsp_norm_p(constant_field(2, [1.0, 0.0]), 1.0, 2.0, samples=4000, rng=0)
    assert rep.value == pytest.approx(4.0, rel=0.02)
    assert set(rep.terms) == {"lp", "grad1"}


def test_fractional_norm_has_gagliardo_term():
    rep = wsp_norm_p(radial_field(2), 0.5, 1.5, samples=20_000, rng=0)
    assert set(rep.terms) == {"lp", "gagliardo0"}
    assert math.isfinite(rep.value)


def test_estimates_are_reproducible():
    u = radial_field(2)
    a = grad_energy(u, 1, 1.25, samples=20_000, rng=7)
    b = grad_energy(u, 1, 1.25, samples=20_000, rng=7)
    assert a.value == b.value and a.stderr == b.stderr


def test_divergence_rule_uses_the_finest_strata():
    assert diverging([1.0, 1.0, 0.1, 0.2, 0.4, 0.9])
    assert not diverging([0.1, 0.2, 0.4, 0.9, 0.5, 0.3])
    assert not diverging([0.1, 0.2, 0.3])
    assert not diverging([0.2, 0.3, 0.4, 0.5])


def test_csv_row_has_schema_columns():
    rep = grad_energy(radial_field(2), 1, 1.25, samples=2000, rng=0)
    assert set(rep.csv_row("x", 0)) == set(CSV_FIELDS)
