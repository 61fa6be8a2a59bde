from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobomap.grid import (Cubication, DomainError, brute_force_crossings, crossing_points, dist_to_set,
                          dual_skeleton, enumerate_skeleton, faces_of_cube, skeleton_points,
                          unit_dual_membership)


def test_inradius_must_be_unit_fraction():
    with pytest.raises(DomainError):
        Cubication(3, Fraction(2, 3))
    with pytest.raises(DomainError):
        Cubication(1, Fraction(1, 2))


def test_125_vertices_for_quarter_grid():
    c = Cubication(3, Fraction(1, 4))
    assert len(enumerate_skeleton(c, 0)) == 125


@pytest.mark.parametrize("m,n", [(2, 1), (2, 3), (3, 2), (3, 4), (4, 2)])
def test_face_counts_match_closed_form(m, n):
    c = Cubication(m, Fraction(1, n))
    for ell in range(m + 1):
        expected = comb(m, ell) * n**ell * (n + 1) ** (m - ell)
        assert len(enumerate_skeleton(c, ell)) == expected


@pytest.mark.parametrize("m", [2, 3, 4])
def test_unit_cube_faces(m):
    for ell in range(m + 1):
        assert len(faces_of_cube(m, ell)) == comb(m, ell) * 2 ** (m - ell)
        assert faces_of_cube(m, ell) == enumerate_skeleton(Cubication.unit(m), ell)


@pytest.mark.parametrize("m,n", [(2, 2), (3, 2), (3, 3)])
def test_dual_piece_counts(m, n):
    c = Cubication(m, Fraction(1, n))
    for ell in range(m):
        star = m - ell - 1
        d = dual_skeleton(c, ell)
        assert d.star_dimension == star
        assert len(d) == comb(m, star) * n ** (m - star)
        assert all(f.halfwidth == 1 for f in d.pieces)


def test_full_skeleton_has_no_dual():
    with pytest.raises(DomainError):
        dual_skeleton(Cubication.unit(3), 3)


def test_dual_avoids_skeleton():
    c = Cubication(3, Fraction(1, 2))
    for ell in range(3):
        pts = skeleton_points(c, ell, per_face=4)
        assert dist_to_set(pts, dual_skeleton(c, ell)).min() > 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.integers(0, 2))
def test_unit_membership_agrees_with_dual(coords, ell):
    x = np.array(coords)
    for k in np.random.default_rng(len(coords)).permutation(3)[: ell + 1]:
        x[k] = 0.0
    dual = dual_skeleton(Cubication.unit(3), ell)
    assert unit_dual_membership(x, ell)[0] == bool(np.atleast_1d(dual.contains(x))[0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3), st.integers(0, 1))
def test_distance_is_at_most_any_sampled_point(coords, ell):
    c = Cubication(3, Fraction(1, 2))
    dual = dual_skeleton(c, ell)
    x = np.array(coords)
    d = dist_to_set(x, dual)
    grid = np.linspace(-1, 1, 41)
    best = np.inf
    for f in dual.pieces:
        ctr, h = f.as_float()
        axes = [np.clip(grid, ctr[k] - h[k], ctr[k] + h[k]) if h[k] else [ctr[k]] for k in range(3)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
        best = min(best, np.linalg.norm(pts - x, axis=1).min())
    assert d <= best + 1e-12
    assert best - d <= 0.05 * np.sqrt(2) + 1e-12


@pytest.mark.parametrize("m,n,ell", [(3, 2, 1), (3, 2, 0), (3, 4, 1), (2, 2, 0), (4, 2, 2)])
def test_crossings_agree_with_brute_force(m, n, ell):
    dual = dual_skeleton(Cubication(m, Fraction(1, n)), ell)
    pairs = sum(comb(len(cr.pieces), 2) for cr in crossing_points(dual))
    assert pairs == brute_force_crossings(dual)


def test_line_crossings_for_half_grid():
    # four lines per axis, each vertical line meets two per horizontal axis
    crs = crossing_points(dual_skeleton(Cubication(3, Fraction(1, 2)), 1))
    assert len(crs) == 8
    assert all(cr.is_point and len(cr.pieces) == 3 for cr in crs)


def test_sup_norm_distance():
    dual = dual_skeleton(Cubication.unit(2), 0)
    assert dist_to_set([0.3, 0.4], dual, norm="sup") == pytest.approx(0.3)
    assert dist_to_set([0.3, 0.4], dual) == pytest.approx(0.3)
    assert dist_to_set([[0.3, 0.4]], []) == np.inf
