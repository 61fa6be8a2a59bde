import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobomap.targets import (SingularityError, Sphere, Torus, homogeneous_extension,
                             projection_derivative_bound_check, sigma_distance_between, singular_project,
                             target_from_name)

finite = st.floats(-3, 3, allow_nan=False)


def test_names_round_trip():
    assert target_from_name("sphere:2").ambient_dim == 3
    assert target_from_name(" Torus ").name == "torus"
    for bad in ("sphere:-1", "klein", "sphere"):
        with pytest.raises(ValueError):
            target_from_name(bad)


def test_projection_refuses_the_singular_set():
    with pytest.raises(SingularityError):
        singular_project(Sphere(1), [0.0, 0.0])
    with pytest.raises(SingularityError):
        singular_project(Torus(), [0.0, 0.0, 0.7])
    with pytest.raises(SingularityError):
        singular_project(Torus(), [2.0, 0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3))
def test_sphere_projection_lands_on_sphere_and_is_idempotent(y):
    t = Sphere(2)
    y = np.array(y)
    if t.dist_to_sigma(y)[0] < 1e-6:
        return
    p = singular_project(t, y)
    assert t.membership(p, tol=1e-12)
    assert np.allclose(singular_project(t, p), p, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3))
def test_torus_projection_lands_on_torus(y):
    t = Torus()
    y = np.array(y)
    if t.dist_to_sigma(y)[0] < 1e-5:
        return
    p = singular_project(t, y)
    assert t.membership(p, tol=1e-10)
    assert np.allclose(singular_project(t, p), p, atol=1e-10)


def test_torus_fixes_its_parameterization():
    t = Torus()
    th, ph = np.meshgrid(np.linspace(0, 6, 13), np.linspace(0, 6, 13))
    pts = t.parameterize(th.ravel(), ph.ravel())
    assert np.abs(singular_project(t, pts) - pts).max() < 1e-12


def test_nearest_projection_needs_the_tube():
    with pytest.raises(ValueError):
        Sphere(1).nearest_projection([0.2, 0.0])
    assert np.allclose(Sphere(1).nearest_projection([1.2, 0.0]), [1.0, 0.0])


def test_first_derivative_constant_is_one_on_the_sphere():
    # |DP(y)| = 1/|y| exactly for the radial projection
    b = projection_derivative_bound_check(Sphere(1), 1, 2000, rng=np.random.default_rng(0))
    assert b.constant == pytest.approx(1.0, rel=1e-9)


def test_second_derivative_constant_for_the_circle():
    # r^2 |D^2 P| is rotation invariant; at (1, 0) the three nonzero
    # entries of the hessian tensor are -1
    b = projection_derivative_bound_check(Sphere(1), 2, 2000, rng=np.random.default_rng(0))
    assert b.constant == pytest.approx(math.sqrt(3), rel=1e-9)


def test_torus_derivative_constant_is_finite_and_agrees_with_the_sphere_limit():
    b = projection_derivative_bound_check(Torus(), 1, 2000, rng=np.random.default_rng(1))
    # near each component of the singular set the torus projection looks
    # like a radial projection in a normal plane, scaled by at most the radii
    assert 0.9 < b.constant < 4.0
    assert math.isfinite(b.mean_value_constant)


def test_sphere_jacobian_matches_difference_quotients():
    t = Sphere(2)
    y = np.random.default_rng(3).normal(size=(50, 3))
    h = 1e-6
    num = np.stack([(t._project(y + h * e) - t._project(y - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
    assert np.abs(num - t.projection_jacobian(y)).max() < 1e-6


def test_separation_of_singular_set_from_torus():
    assert sigma_distance_between(Torus()) == pytest.approx(1.0, abs=1e-6)
    assert sigma_distance_between(Sphere(1)) == pytest.approx(1.0, abs=1e-12)


def test_torus_singular_set_has_two_components():
    assert Torus().sigma_pieces().components() == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.floats(0.05, 20))
def test_homogeneous_extension_is_scale_invariant(x, scale):
    x = np.array(x)
    if np.abs(x).max() < 1e-3:
        return
    g = homogeneous_extension(lambda y: y[:, :1] + 2 * y[:, 1:], 2)
    assert np.allclose(g(scale * x), g(x), atol=1e-12)


def test_homogeneous_extension_rejects_origin_and_wrong_dimension():
    g = homogeneous_extension(lambda y: y, 2)
    with pytest.raises(SingularityError):
        g([0.0, 0.0])
    with pytest.raises(ValueError):
        g([1.0, 0.0, 0.0])


@pytest.mark.parametrize("r", [0.3, 0.7])
def test_extension_of_degree_one_boundary_map_winds_once(r):
    from sobomap.fields import sup_circle, winding_number

    g = homogeneous_extension(lambda y: y / np.linalg.norm(y, axis=1, keepdims=True), 2)
    assert round(winding_number(g(sup_circle((0.0, 0.0), r))), 9) == 1
