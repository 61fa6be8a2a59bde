import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobomap.fields import constant_field, linear_field, radial_field, step_field, twisted_vortex
from sobomap.grid import DomainError
from sobomap.project import (Lattice, Mollifier, ProjectionRun, SelectionError, average_over_shifts,
                             bump_mass, cutoff_split, locate_preimage, markov_threshold, mollifier_estimate_check,
                             mollify, select_shift, shifted_projection, transversality_report)
from sobomap.targets import Sphere, Torus
from sobomap.uncross import UnsupportedError

# integral of exp(-1/(1 - r^2)) over the unit ball, by adaptive quadrature
BUMP_MASS = {1: 0.4439938161680794, 2: 0.46651239317833, 3: 0.44108888727660434}


@pytest.mark.parametrize("m", [1, 2, 3])
def test_bump_mass(m):
    assert bump_mass(m) == pytest.approx(BUMP_MASS[m], abs=1e-10)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_quadrature_weights_sum_to_one(m):
    mol = Mollifier(m, 0.1)
    for rule in (mol.far, mol.near):
        assert abs(rule.weights.sum() - 1.0) < 1e-10
        assert (rule.weights > 0).all()
    # the raw rule converges to the exact mass as nodes are added
    assert Mollifier(m, 0.1, order=16).integral_error() < mol.integral_error() < 1e-2


def test_mollifying_affine_maps_changes_nothing():
    x = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    c = constant_field(2, [1.0, 0.0])
    assert np.abs(mollify(c, 0.1)(x) - [1.0, 0.0]).max() < 1e-12
    lin = linear_field([[1.0, 2.0], [3.0, -1.0]], [0.5, 0.1])
    assert np.abs(mollify(lin, 0.1)(x) - lin(x)).max() < 1e-9


def test_mollified_vortex_matches_independent_quadrature():
    # double integral of the normalized bump against x/|x| at (0.5, 0)
    ue = mollify(radial_field(2), 0.1)
    val = ue(np.array([[0.5, 0.0]]))[0]
    assert val[0] == pytest.approx(0.997379163149995, abs=1e-4)
    assert abs(val[1]) < 1e-9
    gap = np.linalg.norm(val - [1.0, 0.0])
    assert gap == pytest.approx(0.002620836850005026, rel=0.02)
    assert gap <= 0.05


def test_mollified_vortex_vanishes_at_the_centre():
    ue = mollify(radial_field(2), 0.1)
    assert np.abs(ue(np.zeros((1, 2)))).max() < 1e-10


def test_mollified_field_refuses_points_outside_its_lattice():
    ue = mollify(radial_field(2), 0.2)
    with pytest.raises(DomainError):
        ue(np.array([[1.5, 0.0]]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_lattice_is_exact_on_cubics(coef):
    a, b, c, d = coef
    axis = -1.0 + 0.1 * np.arange(21)
    X, Y = np.meshgrid(axis, axis, indexing="ij")

    def poly(x, y):
        return a * x**3 + b * x * y**2 + c * y**3 + d

    lat = Lattice(np.array([-1.0, -1.0]), 0.1, poly(X, Y)[..., None])
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    assert np.allclose(lat(pts)[:, 0], poly(pts[:, 0], pts[:, 1]), atol=1e-12)


def test_preimage_of_a_small_shift_is_one_point_of_degree_one():
    ue = mollify(twisted_vortex(), 0.1)
    a = np.array([1e-3, 2e-3])
    pre = locate_preimage(ue, a, Sphere(1), 0.1 / 8)
    assert len(pre.points) == 1 and pre.degrees == [1]
    assert np.linalg.norm(ue(pre.points) - a) < 1e-7


def test_torus_preimage_lies_on_the_axis_component():
    # mollifying averages the inner-equator circle toward the axis near 0,
    # never toward the core circle
    from sobomap.fields import torus_vortex

    ue = mollify(torus_vortex(), 0.2)
    pre = locate_preimage(ue, np.array([0.01, 0.0, 0.0]), Torus(), 0.2 / 8)
    assert len(pre.points) == 1
    assert pre.components == [0]


def test_preimage_is_unsupported_in_three_dimensions():
    class Fake:
        m = 3
        func = staticmethod(lambda x: x)

    with pytest.raises(UnsupportedError):
        locate_preimage(Fake(), np.zeros(3), Sphere(2), 0.1)


def test_shifted_projection_takes_values_on_the_target():
    ue = mollify(twisted_vortex(), 0.1)
    v = shifted_projection(ue, np.array([1e-3, 0.0]), Sphere(1))
    x = np.random.default_rng(1).uniform(-1, 1, (500, 2))
    x = x[v.dist(x) > 1e-3]
    assert Sphere(1).membership(v(x), tol=1e-12).all()


def test_cutoff_split_adds_back_to_the_projection():
    run = ProjectionRun(twisted_vortex(), Sphere(1), 0.1)
    a = np.array([2e-3, -1e-3])
    v = shifted_projection(run.u_eta, a, run.target)
    w, y = cutoff_split(run, a, v)
    x = np.random.default_rng(2).uniform(-1, 1, (500, 2))
    x = x[v.dist(x) > 1e-3]
    assert np.allclose(w(x) + y(x), v(x), atol=1e-12)


def test_transversality_on_a_regular_value():
    ue = mollify(twisted_vortex(), 0.1)
    a = np.array([1e-3, 2e-3])
    pre = locate_preimage(ue, a, Sphere(1), 0.1 / 8)
    tr = transversality_report(ue, a, Sphere(1), pre, rng=0)
    assert not tr.flagged and min(tr.sigma_min) > 1e-4


def test_markov_threshold():
    assert markov_threshold(0.01) == pytest.approx(0.1)
    assert markov_threshold(1.0) == pytest.approx(2.0)


def test_shift_average_needs_sixteen_shifts():
    run = ProjectionRun(twisted_vortex(), Sphere(1), 0.2)
    with pytest.raises(ValueError):
        average_over_shifts(run, 1.5, 1.0, n_shifts=8)


def test_selection_reports_its_draws_when_nothing_passes():
    from sobomap.project import ShiftAverage

    run = ProjectionRun(twisted_vortex(), Sphere(1), 0.2)
    hopeless = ShiftAverage(0.0, 0.0, [], [])
    with pytest.raises(SelectionError) as err:
        select_shift(run, 1.5, 1.0, hopeless, samples=2000, rng=0, max_draws=2)
    assert len(err.value.diagnostics["tried"]) == 2


def test_estimate_check_on_a_jump():
    fit = mollifier_estimate_check(step_field(2), 0.5, 1.5, etas=(0.2, 0.1), n_points=40, samples=5000, rng=0)
    assert fit.growth("value") < 1.25 and fit.growth("derivative") < 1.25
    assert not fit.counterexamples


def test_constant_field_projects_to_itself():
    ue = mollify(constant_field(2, [1.0, 0.0]), 0.1)
    v = shifted_projection(ue, np.zeros(2), Sphere(1))
    x = np.random.default_rng(3).uniform(-1, 1, (200, 2))
    assert np.abs(v(x) - [1.0, 0.0]).max() < 1e-12
    assert v.singular.empty


def test_curve_in_the_plane_misses_random_shifts():
    # m = 1 into a circle: the singular set of the projection has codimension 2
    curve = linear_field([[0.3], [0.2]], [1.0, 0.0])
    ue = mollify(curve, 0.1)
    rng = np.random.default_rng(4)
    alpha = Sphere(1).sep / 4
    empty = 0
    for _ in range(100):
        a = rng.uniform(-alpha, alpha, 2)
        empty += len(locate_preimage(ue, a, Sphere(1), 0.1 / 8).points) == 0
    assert empty == 100


def test_linear_map_fitted_constant_is_inverse_singular_value():
    lin = linear_field(np.diag([2.0, 0.5]))
    ue = mollify(lin, 0.1)
    a = np.array([0.013, -0.021])
    pre = locate_preimage(ue, a, Sphere(1), 0.1 / 8)
    assert len(pre.points) == 1
    assert np.allclose(pre.points[0], [0.0065, -0.042], atol=1e-7)
    tr = transversality_report(ue, a, Sphere(1), pre, rng=0)
    assert tr.c_fit == pytest.approx(2.0, rel=0.05)
    assert min(tr.sigma_min) == pytest.approx(0.5, rel=1e-4)


def test_cutoff_vanishes_where_the_mollified_vortex_is_on_the_circle():
    run = ProjectionRun(radial_field(2), Sphere(1), 0.1)
    a = np.array([1e-3, 1e-3])
    w, y = cutoff_split(run, a)
    assert np.abs(y(np.array([[0.9, 0.0]]))).max() == 0.0
    # near the centre u_eta - a is close to 0 and w is switched off
    x0 = locate_preimage(run.u_eta, a, Sphere(1), run.pitch).points
    assert np.abs(w(x0 + 1e-4)).max() == 0.0
