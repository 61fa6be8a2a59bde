"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Run alone with `python3 -m pytest tests/test_acceptance.py -v -s`; the
verdict lines are repeated in the terminal summary.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from sobomap.energy import grad_energy
from sobomap.fields import (build_rigid_map, compose_with_diffeo, radial_field, step_field, twisted_vortex,
                            verify_class)
from sobomap.grid import Cubication, dual_skeleton
from sobomap.project import mollifier_estimate_check, projection_pipeline
from sobomap.shrink import (column_vortex, ladder_decreasing, loglog_slope, measure_ratio, shrink_energy_check,
                            uncross_and_shrink_pipeline)
from sobomap.targets import Sphere, Torus
from sobomap.uncross import (Well, build_phi_general, build_phi_top_lines, edge_skeleton_points,
                             model_retraction_g, random_pipeline, singular_components, surviving_crossings,
                             vertical_pieces)

HALF = Cubication(3, Fraction(1, 2))

pytestmark = pytest.mark.acceptance


def _fmt(values):
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


def test_criterion_01_vortex_energy(verdict):
    t0 = time.time()
    u = radial_field(2)
    worst = 0.0
    parts = []
    for p in (1.25, 1.5, 1.75):
        exact = 2 * math.pi / (2 - p)
        grid = grad_energy(u, 1, p, domain="disk", estimator="tensor-grid").value
        mc = grad_energy(u, 1, p, domain="disk", estimator="monte-carlo", samples=200_000, rng=0).value
        errs = (abs(grid - exact) / exact, abs(mc - exact) / exact)
        worst = max(worst, *errs)
        parts.append(f"p={p} grid {errs[0]:.1e} mc {errs[1]:.1e}")
    dt = time.time() - t0
    verdict(1, worst <= 0.02 and dt < 30, f"relative errors {'; '.join(parts)}; {dt:.1f}s")


def test_criterion_02_shrink_slope(verdict):
    t0 = time.time()
    taus = [1 / 4, 1 / 8, 1 / 16]
    v = column_vortex()
    slopes = {}
    for p in (1.25, 1.5):
        cores = [shrink_energy_check(v, 0.4, tau, p, eta=0.5, samples=100_000, rng=1).core for tau in taus]
        slopes[p] = loglog_slope(taus, cores)
    dt = time.time() - t0
    ok = all(abs(s - (2 - p)) <= 0.1 for p, s in slopes.items()) and dt < 120
    verdict(2, ok, f"slopes {', '.join(f'p={p}: {s:.4f} (want {2 - p})' for p, s in slopes.items())}; {dt:.1f}s")


def test_criterion_03_projection_convergence(verdict):
    t0 = time.time()
    etas = [0.2, 0.1, 0.05]
    steps = projection_pipeline(twisted_vortex(), Sphere(1), 1.0, 1.5, etas, samples=20_000,
                                distance_samples=80_000, rng=5)
    d = [st.distance.value for st in steps]
    e = [st.distance.stderr for st in steps]
    strict = all(b < a for a, b in zip(d, d[1:])) and ladder_decreasing(d, e, k=2.0)
    ratio = d[-1] / d[0]
    frac = projection_pipeline(twisted_vortex(), Sphere(1), 0.5, 2.5, etas, samples=20_000,
                               distance_samples=80_000, rng=5)
    fd = [st.distance.value for st in frac]
    fe = [st.distance.stderr for st in frac]
    frac_ok = ladder_decreasing(fd, fe, k=3.0)
    dt = time.time() - t0
    ok = strict and ratio <= 0.25 and frac_ok and dt < 600
    verdict(3, ok, f"s=1 p=1.5 distances {_fmt(d)} (stderr {_fmt(e)}) final/initial {ratio:.3f}; "
                   f"s=0.5 p=2.5 distances {_fmt(fd)} (stderr {_fmt(fe)}); {dt:.1f}s")


def test_criterion_04_mollifier_constants(verdict):
    t0 = time.time()
    fields = {"vortex": radial_field(2), "jump": step_field(2), "twisted": twisted_vortex()}
    parts, ok = [], True
    for name, f in fields.items():
        fit = mollifier_estimate_check(f, 0.5, 1.5, rng=1)
        gv, gd = fit.growth("value"), fit.growth("derivative")
        ok &= gv <= 1.25 and gd <= 1.25 and not fit.counterexamples
        parts.append(f"{name} {gv:.3f}/{gd:.3f}")
    dt = time.time() - t0
    verdict(4, ok and dt < 300, f"max/min of value/derivative constants over eta: {', '.join(parts)}; {dt:.1f}s")


def test_criterion_05_line_uncrossing(verdict):
    t0 = time.time()
    dual = dual_skeleton(HALF, 1)
    eta = float(HALF.eta)
    rng = np.random.default_rng(0)
    parts, ok = [], True
    for mu in (0.2, 0.1, 0.05):
        phi = build_phi_top_lines(HALF, mu)
        pull = phi.pullback(dual)
        well = Well(tuple(vertical_pieces(dual.pieces, (2,))), 2, mu * eta, eta)
        x = rng.uniform(-1, 1, (40_000, 3))
        outside = x[~well.contains(x)][:10_000]
        fixed = outside.shape[0] == 10_000 and np.array_equal(phi.apply(outside), outside)
        y = rng.uniform(-1, 1, (10_000, 3))
        det = phi.det(y)
        support = rng.uniform(-1, 1, (200_000, 3))
        support = support[phi.support(support)][:10_000]
        det_in = phi.det(support)
        good = (pull.crossings_before > 0 and pull.crossing_count == 0 and fixed
                and (det > 0).all() and (det_in > 0).all())
        ok &= good
        parts.append(f"mu={mu} crossings {pull.crossings_before}->{pull.crossing_count} identity outside well "
                     f"{fixed} min det {min(det.min(), det_in.min()):.2e}")
    dt = time.time() - t0
    verdict(5, ok and dt < 120, f"{'; '.join(parts)}; {dt:.1f}s")


def test_criterion_06_plane_uncrossing(verdict):
    t0 = time.time()
    faces = list(dual_skeleton(HALF, 0).pieces)

    def mixed(cr):
        return len({2 in faces[i].axes for i in cr.pieces}) == 2

    parts, ok = [], True
    for mu in (0.4, 0.2, 0.1, 0.05):
        phi = build_phi_general(HALF, 0, mu)
        first = surviving_crossings(phi.truncated(1), faces)
        both = surviving_crossings(phi, faces)
        vh = sum(mixed(cr) for cr in first)
        ok &= vh == 0 and len(both) == 0
        parts.append(f"mu={mu} pass 1 vertical-horizontal {vh}, pass 2 total {len(both)}")
    dt = time.time() - t0
    verdict(6, ok and dt < 180, f"{'; '.join(parts)}; {dt:.1f}s")


def test_criterion_07_pipeline(verdict):
    t0 = time.time()
    u = build_rigid_map(HALF, 1, Sphere(1))
    steps = uncross_and_shrink_pipeline(u, HALF, 1, 1.0, 1.5, [0.4, 0.2, 0.1, 0.05], samples=50_000, rng=3,
                                        strict=False)
    d = [st.distance.value for st in steps]
    e = [st.distance.stderr for st in steps]
    decreasing = ladder_decreasing(d, e)
    ratio = d[-1] / d[0]
    classes = [st.report.passed for st in steps]
    worst = [max(st.report.band_sups) / float(np.median(st.report.band_sups)) for st in steps]
    dt = time.time() - t0
    ok = decreasing and ratio <= 0.25 and all(classes) and dt < 900
    verdict(7, ok, f"distances {_fmt(d)} decreasing {decreasing} final/initial {ratio:.3f}; "
                   f"verify_class(uncr) {classes} max band sup / median {_fmt(worst)}; {dt:.1f}s")


def test_criterion_08_measure_law(verdict):
    t0 = time.time()
    parts, ok = [], True
    # l = 1 is the line pipeline of criterion 7; planes are reported alongside
    for ell in (1, 0):
        ratios = [measure_ratio(HALF, ell, mu) for mu in ("0.4", "0.2", "0.1", "0.05")]
        spread = max(ratios) / min(ratios)
        if ell == 1:
            ok &= spread <= 2
        parts.append(f"l={ell} ratios {[str(r) for r in ratios]} spread {float(spread):.4f}"
                     + ("" if ell == 1 else " (not gated)"))
    dt = time.time() - t0
    verdict(8, ok and dt < 60, f"{'; '.join(parts)}; {dt:.2f}s")


def test_criterion_09_topology(verdict):
    t0 = time.time()
    g = model_retraction_g()
    comps = singular_components(g.singular)
    torus = Torus().sigma_pieces().components()
    e = edge_skeleton_points()
    fix = float(np.abs(g(e) - e).max())
    dt = time.time() - t0
    ok = comps == 5 and torus == 2 and fix <= 1e-9 and dt < 10
    verdict(9, ok, f"retraction components {comps}, torus singular components {torus}, "
                   f"edge displacement {fix:.1e}; {dt:.2f}s")


def test_criterion_10_class_stability(verdict):
    t0 = time.time()
    u = build_rigid_map(HALF, 1, Sphere(1))
    cu = verify_class(u, "rig").constants[1]
    rng = np.random.default_rng(11)
    parts, ok = [], True
    for _ in range(5):
        phi = random_pipeline(HALF, rng)
        rep = verify_class(compose_with_diffeo(u, phi), "cros", rng=rng)
        lip = phi.lipschitz_constant()
        bound = cu * lip * 4
        good = rep.passed and rep.constants[1] <= bound
        ok &= good
        parts.append(f"mu={phi.params['mu']:.3f} passed {rep.passed} C={rep.constants[1]:.3g} "
                     f"bound {bound:.3g} max/median {max(rep.band_sups) / np.median(rep.band_sups):.2f}")
    dt = time.time() - t0
    verdict(10, ok and dt < 180, f"{'; '.join(parts)}; {dt:.1f}s")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
