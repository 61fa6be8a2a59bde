from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobomap.fields import (ConstructionError, build_rigid_map, compose_with_diffeo, constant_field,
                            fd_jacobian, frobenius, linear_field, radial_field, step_field, sup_circle,
                            torus_vortex, twisted_vortex, verify_class, winding_number)
from sobomap.grid import Cubication, dual_skeleton
from sobomap.targets import Sphere, Torus
from sobomap.uncross import identity_pipeline

HALF = Cubication(3, Fraction(1, 2))


def test_vortex_values_and_jacobian():
    u = radial_field(2)
    x = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    assert np.allclose(np.linalg.norm(u(x), axis=1), 1.0)
    num = fd_jacobian(u.func, x, u.dist(x))
    assert np.abs(num - u.jac(x)).max() < 1e-5
    # |Du| = 1/|x| for the planar vortex
    assert np.allclose(frobenius(u.jac(x)) * np.linalg.norm(x, axis=1), 1.0)


def test_twisted_vortex_has_degree_one():
    u = twisted_vortex()
    for r in (0.05, 0.3, 0.9):
        assert round(winding_number(u(sup_circle((0.0, 0.0), r)))) == 1
    assert np.allclose(np.linalg.norm(u(np.array([[0.3, 0.4]])), axis=1), 1.0)


def test_torus_vortex_lies_on_the_torus():
    x = np.random.default_rng(1).uniform(-1, 1, (100, 2))
    for angle in (np.pi, 0.7):
        u = torus_vortex(angle)
        assert Torus().membership(u(x), tol=1e-12).all()


def test_step_field_is_singular_on_hyperplane():
    u = step_field(2)
    assert u.singular.dimension() == 1
    assert u(np.array([[0.1, 0.5], [-0.1, 0.5]])).ravel().tolist() == [1.0, -1.0]
    assert u.dist(np.array([[0.25, 0.3]]))[0] == pytest.approx(0.25)


@pytest.mark.parametrize("ell", [0, 1])
def test_rigid_map_lands_on_target(ell):
    t = Sphere(ell)
    u = build_rigid_map(HALF, ell, t)
    x = np.random.default_rng(2).uniform(-1, 1, (5000, 3))
    x = x[u.dist(x) > 1e-6]
    assert t.membership(u(x), tol=1e-12).all()


def test_rigid_map_winds_once_around_every_dual_line():
    u = build_rigid_map(HALF, 1, Sphere(1))
    for f in dual_skeleton(HALF, 1).pieces:
        c, _ = f.as_float()
        axis = f.axes[0]
        normal = tuple(a for a in range(3) if a != axis)
        centre = c.copy()
        centre[axis] = 0.3
        loop = sup_circle(centre, 0.2, n=800, axes=normal, m=3)
        assert abs(round(winding_number(u(loop)))) == 1


def test_rigid_map_is_continuous_off_the_dual_skeleton():
    u = build_rigid_map(HALF, 1, Sphere(1))
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, (4000, 3))
    x = x[u.dist(x) > 0.05]
    step = rng.normal(size=x.shape)
    step *= 1e-7 / np.linalg.norm(step, axis=1, keepdims=True)
    assert np.abs(u(x + step) - u(x)).max() < 1e-4


def test_rigid_map_rejects_mismatched_target():
    with pytest.raises(ConstructionError):
        build_rigid_map(HALF, 1, Sphere(2))
    with pytest.raises(ConstructionError):
        build_rigid_map(HALF, 1, Sphere(1), seed="noise")


def test_verify_class_vortex_constant_is_one():
    rep = verify_class(radial_field(2), "cros")
    assert rep.passed
    assert rep.constants[1] == pytest.approx(1.0, rel=1e-9)


def test_verify_class_rigid_passes_and_tags_are_checked():
    u = build_rigid_map(HALF, 1, Sphere(1))
    assert verify_class(u, "rig").passed
    rep = verify_class(u, "uncr")
    assert not rep.passed and rep.crossing_count == 8
    assert not verify_class(radial_field(2), "smooth").passed
    assert verify_class(constant_field(2, [1.0, 0.0]), "smooth").passed
    with pytest.raises(ValueError):
        verify_class(u, "bogus")


def test_verify_class_flags_a_steeper_blowup():
    # |Du| ~ 1/|x|^2 makes |Du| dist grow band over band
    def f(x):
        r2 = (x**2).sum(axis=1, keepdims=True)
        return x / r2

    u = radial_field(2)
    steep = type(u)(2, 2, f, u.singular, None, None, {"constructor": "test"}, crossings=0)
    assert not verify_class(steep, "cros").passed


def test_compose_with_identity_is_the_same_field():
    u = build_rigid_map(HALF, 1, Sphere(1))
    assert compose_with_diffeo(u, identity_pipeline(3)) is u


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_linear_field_difference_quotients(entries, b):
    A = np.array(entries).reshape(2, 2)
    u = linear_field(A, b)
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    assert np.allclose(u(x), x @ A.T + np.array(b))
    assert np.allclose(fd_jacobian(u.func, x, np.full(20, np.inf)), A, atol=1e-6)
