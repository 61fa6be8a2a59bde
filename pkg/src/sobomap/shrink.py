"""Shrinking maps around the vertical part of a singular set.

Around each column R (a sup-norm neighbourhood of an axis-parallel piece) the
shrink map sends the thin core R_tau onto R_1 by the dilation 1/tau, the
annulus R_2 minus R_tau onto R_2 minus R_1 radially, and fixes everything
outside R_2.  Radii are multiples of mu*eta; the norm in the normal
coordinates is the sup norm so that columns are square.

Composing a field with the shrink map pushes its energy near the column
into the core, where the tau^(codim - p) scaling makes it small.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .energy import Box, EnergyReport, grad_energy, wsp_distance
from .fields import ClassReport, MapField, compose_with_diffeo, verify_class
from .geometry import AffinePiece, PieceSet
from .grid import Cubication, DomainError, dual_skeleton
from .runtime import as_rng
from .uncross import PipelineError, UnsupportedError, build_phi_general

EPS0 = 1e-12


def _rows(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def check_parameters(mu: float, tau: float) -> None:
    if not 0 < mu < 0.5:
        raise DomainError(f"mu < 1/2 and mu > 0 required, got mu={mu}")
    if not 0 < tau < 0.5:
        raise DomainError(f"tau < 1/2 and tau > 0 required, got tau={tau}")


@dataclass(frozen=True)
class Column:
    """Sup-norm column around {x[normal_axes] = center}."""

    normal_axes: tuple
    center: tuple

    def offset(self, x):
        return x[:, list(self.normal_axes)] - np.asarray(self.center, float)

    def radius(self, x):
        return np.abs(self.offset(x)).max(axis=1)

    def box(self, m: int, half: float) -> Box:
        lo, hi = [-1.0] * m, [1.0] * m
        for a, c in zip(self.normal_axes, self.center):
            lo[a] = max(-1.0, c - half)
            hi[a] = min(1.0, c + half)
        return Box(tuple(lo), tuple(hi))


@dataclass(frozen=True)
class ShrinkGeometry:
    """A family of parallel columns with radii tau*mu*eta < mu*eta < 2*mu*eta."""

    m: int
    columns: tuple
    mu: float
    eta: float

    @property
    def unit(self) -> float:
        return self.mu * self.eta

    @property
    def codim(self) -> int:
        return len(self.columns[0].normal_axes) if self.columns else 0

    def region(self, x, factor: float) -> np.ndarray:
        """Points of the open factor*mu*eta neighbourhood."""
        x, _ = _rows(x)
        out = np.zeros(len(x), dtype=bool)
        for col in self.columns:
            out |= col.radius(x) < factor * self.unit
        return out

    def check_disjoint(self) -> None:
        # outer columns of one family must not overlap
        for i, a in enumerate(self.columns):
            for b in self.columns[i + 1:]:
                if a.normal_axes != b.normal_axes:
                    continue
                gap = np.abs(np.subtract(a.center, b.center)).max()
                if gap < 4 * self.unit:
                    raise DomainError(f"columns at {a.center} and {b.center} overlap for mu={self.mu}")

    def to_dict(self) -> dict:
        return {"mu": self.mu, "eta": self.eta,
                "columns": [{"normal_axes": list(c.normal_axes), "center": list(c.center)}
                            for c in self.columns]}


def vertical_geometry(c: Cubication, ell: int, mu: float, vertical: int = None) -> list[ShrinkGeometry]:
    """Column families around the pieces of the dual skeleton containing the vertical axis.

    Lines in R^3 give one family of codimension 2; planes give two families
    of codimension 1, which are shrunk one after the other.
    """
    m = c.m
    vertical = m - 1 if vertical is None else vertical
    eta = float(c.eta)
    fams: dict = {}
    for f in dual_skeleton(c, ell).pieces:
        if vertical not in f.axes:
            continue
        normal = tuple(a for a in range(m) if a not in f.axes)
        ctr, _ = f.as_float()
        fams.setdefault(normal, set()).add(tuple(float(ctr[a]) for a in normal))
    out = []
    for normal in sorted(fams):
        # every centre combination, so a column exists for each vertical piece
        cols = tuple(Column(normal, k) for k in sorted(fams[normal]))
        g = ShrinkGeometry(m, cols, mu, eta)
        g.check_disjoint()
        out.append(g)
    return out


class ShrinkMap:
    """The shrink homeomorphism x -> y for one column family; u o shrink is the shrunk field."""

    is_identity = False

    def __init__(self, geometry: ShrinkGeometry, tau: float):
        check_parameters(geometry.mu, tau)
        self.geometry = geometry
        self.tau = float(tau)
        self.m = geometry.m

    def _forward_offset(self, d, r):
        mh, t = self.geometry.unit, self.tau
        out = d.copy()
        core = r <= t * mh
        out[core] = d[core] / t
        mid = (~core) & (r < 2 * mh)
        rr = r[mid]
        out[mid] = d[mid] / rr[:, None] * ((rr - t * mh) / (2 - t) + mh)[:, None]
        return out

    def _inverse_offset(self, d, r):
        mh, t = self.geometry.unit, self.tau
        out = d.copy()
        core = r <= mh
        out[core] = d[core] * t
        mid = (~core) & (r < 2 * mh)
        rr = r[mid]
        out[mid] = d[mid] / rr[:, None] * ((rr - mh) * (2 - t) + t * mh)[:, None]
        return out

    def _map(self, x, offset_fn):
        x, single = _rows(x)
        y = x.copy()
        for col in self.geometry.columns:
            d = col.offset(x)
            r = np.abs(d).max(axis=1)
            rows = np.nonzero(r < 2 * self.geometry.unit)[0]
            if rows.size == 0:
                continue
            new = offset_fn(d[rows], r[rows]) + np.asarray(col.center, float)
            for i, a in enumerate(col.normal_axes):
                y[rows, a] = new[:, i]
        return y[0] if single else y

    def apply(self, x):
        return self._map(x, self._forward_offset)

    def inverse(self, y):
        return self._map(y, self._inverse_offset)

    def in_image(self, y) -> np.ndarray:
        y, _ = _rows(y)
        return np.ones(len(y), dtype=bool)

    def support(self, x) -> np.ndarray:
        return self.geometry.region(x, 2.0)

    def jacobian(self, x, h: float = 1e-6) -> np.ndarray:
        x, single = _rows(x)
        J = np.empty((len(x), self.m, self.m))
        for k in range(self.m):
            e = np.zeros(self.m)
            e[k] = h
            J[:, :, k] = (self.apply(x + e) - self.apply(x - e)) / (2 * h)
        return J[0] if single else J

    def describe(self) -> dict:
        return {"kind": "shrink", "tau": self.tau, **self.geometry.to_dict()}

    def pullback(self, target) -> "ShrinkPullback":
        ps = target if isinstance(target, PieceSet) else PieceSet.from_faces(list(target), self.m)
        return ShrinkPullback(self._pull_pieces(ps))

    def _pull_pieces(self, ps: PieceSet) -> PieceSet:
        step = self.geometry.unit / 16
        out = []
        for q in ps.pieces:
            if q.k == 0:
                out.append(AffinePiece.point(self.inverse(q.origin), q.label))
                continue
            if q.k != 1:
                raise UnsupportedError("shrink pullback handles points and segments")
            a = q.origin - q.half_extents[0] * q.tangents[0]
            b = q.origin + q.half_extents[0] * q.tangents[0]
            n = self._subdivisions(a, b, step)
            t = np.linspace(0.0, 1.0, n + 1)[:, None]
            pts = self.inverse(a + t * (b - a))
            out.extend(AffinePiece.segment(pts[i], pts[i + 1], q.label) for i in range(n))
        return PieceSet(out, self.m)

    def _subdivisions(self, a, b, step) -> int:
        reach = 2 * self.geometry.unit
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        for col in self.geometry.columns:
            ax = list(col.normal_axes)
            cc = np.asarray(col.center, float)
            if ((lo[ax] < cc + reach) & (hi[ax] > cc - reach)).all():
                # the map is affine along lines parallel to the column axis
                if np.abs(b[ax] - a[ax]).max() < 1e-14:
                    return 1
                return int(min(4096, max(1, math.ceil(np.linalg.norm(b - a) / step))))
        return 1


@dataclass
class ShrinkPullback:
    pieces: PieceSet
    # a homeomorphism neither creates nor removes crossings
    crossing_count: int | None = None


def shrink_map_rect(v: MapField, mu: float, tau: float, eta: float, placement) -> MapField:
    """v composed with the shrink map of a single column.

    `placement` is (normal_axes, center), e.g. ((0, 1), (0.0, 0.0)) for the
    x3 axis in R^3.
    """
    check_parameters(mu, tau)
    axes, center = placement
    if len(axes) not in (1, 2):
        raise UnsupportedError("shrink columns of codimension 1 or 2 only")
    geo = ShrinkGeometry(v.m, (Column(tuple(axes), tuple(float(c) for c in center)),), mu, eta)
    return compose_with_diffeo(v, ShrinkMap(geo, tau))


def column_vortex(m: int = 3, normal_axes=(0, 1), center=(0.0, 0.0)) -> MapField:
    """The planar vortex in the normal coordinates, constant along the column."""
    from .targets import Sphere

    ax = list(normal_axes)
    c = np.asarray(center, dtype=float)

    def f(x):
        y = x[:, ax] - c
        return y / np.linalg.norm(y, axis=1, keepdims=True)

    def jac(x):
        y = x[:, ax] - c
        r = np.linalg.norm(y, axis=1)
        u = y / r[:, None]
        J = np.zeros((len(x), 2, m))
        J[:, :, ax] = (np.eye(2)[None] - u[:, :, None] * u[:, None, :]) / r[:, None, None]
        return J

    origin = np.zeros(m)
    origin[ax] = c
    along = [a for a in range(m) if a not in ax]
    piece = AffinePiece(origin, np.eye(m)[along], np.ones(len(along)), 0)
    return MapField(m, 2, f, PieceSet([piece], m), Sphere(1), jac,
                    {"constructor": "column_vortex", "m": m, "normal_axes": ax, "center": c.tolist()},
                    crossings=0)


# energies --------------------------------------------------------------------------

def region_energy(v: MapField, p: float, geo: ShrinkGeometry, outer: float, inner: float = 0.0,
                  samples: int = 200_000, rng=None, tube_radius: float = 0.25) -> EnergyReport:
    """Integral of |Dv|^p over {inner <= |x'| < outer} (units of mu*eta) around every column."""
    rng = as_rng(rng)
    per = max(2000, samples // max(1, len(geo.columns)))
    total, var = 0.0, 0.0
    lo_r, hi_r = inner * geo.unit, outer * geo.unit
    for col in geo.columns:
        box = col.box(v.m, hi_r)

        def mask(x, col=col):
            r = col.radius(x)
            return (r >= lo_r) & (r < hi_r)

        rep = grad_energy(v, 1, p, box, samples=per, rng=rng, tube_radius=min(tube_radius, hi_r), mask=mask)
        total += rep.value
        var += rep.stderr ** 2
    return EnergyReport(total, "monte-carlo", per * len(geo.columns), math.sqrt(var),
                        params={"p": p, "inner": inner, "outer": outer}, quantity="column_energy")


@dataclass
class ShrinkEnergy:
    tau: float
    lhs: float
    outer: float
    inner: float
    rhs: float
    c_fit: float
    core: float
    core_stderr: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def shrink_energy_check(v: MapField, mu: float, tau: float, p: float, eta: float = 1.0,
                        placement=((0, 1), (0.0, 0.0)), samples: int = 200_000, rng=None) -> ShrinkEnergy:
    """Energies on both sides of the shrink estimate for one column.

    lhs is the energy of the shrunk field on R_2, rhs is the annulus energy
    of v plus tau^(codim - p) times its energy on R_1.  `core` is the energy
    of the shrunk field on R_tau.
    """
    check_parameters(mu, tau)
    axes, center = placement
    codim = len(axes)
    if p >= codim:
        raise DomainError(f"p < {codim} required for a codimension-{codim} shrink, got p={p}")
    rng = as_rng(rng)
    geo = ShrinkGeometry(v.m, (Column(tuple(axes), tuple(float(c) for c in center)),), mu, eta)
    vs = compose_with_diffeo(v, ShrinkMap(geo, tau))
    lhs = region_energy(vs, p, geo, 2.0, samples=samples, rng=rng).value
    outer = region_energy(v, p, geo, 2.0, 1.0, samples=samples, rng=rng).value
    inner = region_energy(v, p, geo, 1.0, samples=samples, rng=rng).value
    core = region_energy(vs, p, geo, tau, samples=samples, rng=rng)
    rhs = outer + tau ** (codim - p) * inner
    c_fit = lhs / rhs if rhs > 0 else 0.0
    return ShrinkEnergy(tau, lhs, outer, inner, rhs, c_fit, core.value, core.stderr)


def shrink_constant_stable(checks: list[ShrinkEnergy], factor: float = 1.5) -> bool:
    fits = [c.c_fit for c in checks if c.rhs > 0]
    if not fits:
        return True
    return max(fits) <= factor * min(fits)


def loglog_slope(xs, ys) -> float:
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def tau_from_energies(inner: float, outer: float, p: float, codim: int = 2) -> float:
    """Largest tau <= 1/4 with tau^(codim - p) * inner <= outer."""
    if p >= codim:
        raise DomainError(f"p < {codim} required, got p={p}")
    ratio = outer / max(inner, EPS0)
    return min(0.25, ratio ** (1.0 / (codim - p)))


def select_tau(v: MapField, geo: ShrinkGeometry, p: float, samples: int = 200_000, rng=None):
    """(tau, inner energy, outer energy) for the columns of `geo`."""
    rng = as_rng(rng)
    inner = region_energy(v, p, geo, 1.0, samples=samples, rng=rng).value
    outer = region_energy(v, p, geo, 2.0, 1.0, samples=samples, rng=rng).value
    return tau_from_energies(inner, outer, p, geo.codim), inner, outer


# measure of the neighbourhood of the dual skeleton ---------------------------------

def neighbourhood_measure(c: Cubication, ell: int, width) -> Fraction:
    """Exact volume of Q^m intersected with the sup-norm width-neighbourhood of the dual skeleton.

    Every piece thickens to an axis box, so the union is constant on the
    cells cut out by all box faces and the volume follows by summing cells.
    Rational arithmetic keeps the result exact for rational widths.
    """
    m = c.m
    width = _exact(width)
    one = Fraction(1)
    boxes = []
    for f in dual_skeleton(c, ell).pieces:
        lo, hi = f.bounds()
        boxes.append(([max(Fraction(a) - width, -one) for a in lo],
                      [min(Fraction(b) + width, one) for b in hi]))
    cuts = []
    for a in range(m):
        vals = {-one, one}
        for lo, hi in boxes:
            vals.update((lo[a], hi[a]))
        cuts.append(sorted(vals))
    total = Fraction(0)
    for cell in itertools.product(*[range(len(k) - 1) for k in cuts]):
        mid = [(cuts[a][i] + cuts[a][i + 1]) / 2 for a, i in enumerate(cell)]
        if any(all(lo[a] < mid[a] < hi[a] for a in range(m)) for lo, hi in boxes):
            vol = Fraction(1)
            for a, i in enumerate(cell):
                vol *= cuts[a][i + 1] - cuts[a][i]
            total += vol
    return total


def _exact(x) -> Fraction:
    # decimal literals such as 0.4 are meant as 2/5, not the nearest double
    return x if isinstance(x, Fraction) else Fraction(str(x))


def measure_A_mu(c: Cubication, ell: int, mu) -> Fraction:
    """Volume of the 2*mu*eta neighbourhood of the dual skeleton inside Q^m."""
    return neighbourhood_measure(c, ell, 2 * _exact(mu) * Fraction(c.eta))


def measure_ratio(c: Cubication, ell: int, mu) -> Fraction:
    return measure_A_mu(c, ell, mu) / (_exact(mu) * Fraction(c.eta)) ** (ell + 1)


# the pipeline ----------------------------------------------------------------------

@dataclass
class LadderStep:
    mu: float
    taus: list
    field: MapField
    distance: EnergyReport
    report: ClassReport
    energies: list = field(default_factory=list)

    def row(self) -> dict:
        return {"mu": self.mu, "tau": self.taus, "distance": self.distance.value,
                "stderr": self.distance.stderr, "class": self.report.passed,
                "energies": self.energies}


def shrink_stage(v: MapField, c: Cubication, ell: int, mu: float, p: float,
                 samples: int = 200_000, rng=None):
    """Shrink every vertical column family of v in turn; returns (field, taus, energies)."""
    rng = as_rng(rng)
    out, taus, energies = v, [], []
    for geo in vertical_geometry(c, ell, mu):
        if p >= geo.codim:
            raise DomainError(f"p < {geo.codim} required to shrink codimension-{geo.codim} columns, got p={p}")
        tau, inner, outer = select_tau(out, geo, p, samples=samples, rng=rng)
        out = compose_with_diffeo(out, ShrinkMap(geo, tau))
        taus.append(tau)
        energies.append({"inner": inner, "outer": outer, "tau": tau, "codim": geo.codim})
    return out, taus, energies


def uncross_and_shrink_pipeline(u: MapField, c: Cubication, ell: int, s: float, p: float, mus,
                                samples: int = 200_000, class_samples: int = 1000, rng=None,
                                on_step=None, strict: bool = True) -> list[LadderStep]:
    """For each mu: uncross, shrink the vertical columns, measure the distance to u and classify.

    With `strict`, raises PipelineError naming mu when a shrunk field fails
    the uncrossed class; otherwise the failing report is kept in the step.
    """
    rng = as_rng(rng)
    steps = []
    for mu in mus:
        phi = build_phi_general(c, ell, mu)
        v = compose_with_diffeo(u, phi)
        w, taus, energies = shrink_stage(v, c, ell, mu, p, samples=samples, rng=rng)
        rep = verify_class(w, "uncr", samples_per_band=class_samples, rng=rng, raise_on_failure=False)
        if strict and not rep.passed:
            raise PipelineError(f"shrunk field at mu={mu} is not in the uncrossed class: {rep.message}")
        dist = wsp_distance(w, u, s, p, samples=samples, rng=rng)
        step = LadderStep(mu, taus, w, dist, rep, energies)
        steps.append(step)
        if on_step is not None:
            on_step(step)
    return steps


def ladder_decreasing(values, errors, k: float = 2.0) -> bool:
    """Each value at most the previous one plus k combined standard errors."""
    for (a, ea), (b, eb) in zip(zip(values, errors), zip(values[1:], errors[1:])):
        if b > a + k * math.hypot(ea, eb):
            return False
    return True
