"""Manifold-valued maps on the cube with declared singular sets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .geometry import AffinePiece, PieceSet
from .grid import Cubication, Face, crossing_points, dual_skeleton
from .targets import Sphere, TargetManifold, Torus


class ConstructionError(ValueError):
    pass


class ClassificationError(ValueError):
    pass


def _rows(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def fd_jacobian(func: Callable, x: np.ndarray, dist: np.ndarray, h0: float = 1e-5) -> np.ndarray:
    """Central differences, step clamped below dist/4 so stencils stay off the singular set."""
    x = np.atleast_2d(x)
    h = np.minimum(h0, np.asarray(dist, dtype=float) / 4.0)
    h = np.where(np.isfinite(h) & (h > 0), h, h0)
    cols = []
    for k in range(x.shape[1]):
        step = np.zeros_like(x)
        step[:, k] = h
        cols.append((func(x + step) - func(x - step)) / (2 * h[:, None]))
    return np.stack(cols, axis=-1)


@dataclass
class MapField:
    """Vectorized map R^m -> R^nu, smooth off `singular`.

    `func` takes an (n, m) array.  `jac`, when given, returns (n, nu, m).
    `faces` keeps the exact dual-skeleton description when there is one,
    so crossings can be counted without sampling.
    """

    m: int
    nu: int
    func: Callable[[np.ndarray], np.ndarray]
    singular: PieceSet
    target: TargetManifold | None = None
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    descriptor: dict = field(default_factory=dict)
    faces: tuple[Face, ...] | None = None
    crossings: int | None = None

    def eval(self, x):
        y, single = _rows(x)
        out = np.asarray(self.func(y), dtype=float).reshape(y.shape[0], self.nu)
        return out[0] if single else out

    __call__ = eval

    def dist(self, x) -> np.ndarray:
        y, _ = _rows(x)
        return self.singular.distance(y)

    def derivative(self, x, j: int = 1) -> np.ndarray:
        y, single = _rows(x)
        d = self.dist(y)
        if j == 1:
            out = self.jac(y) if self.jac is not None else fd_jacobian(self.eval, y, d)
        elif j == 2:
            first = self.jac if self.jac is not None else (lambda z: fd_jacobian(self.eval, z, self.dist(z)))
            out = fd_jacobian(lambda z: first(z).reshape(z.shape[0], -1), y, d, h0=1e-4)
            out = out.reshape(y.shape[0], self.nu, self.m, self.m)
        else:
            raise ValueError("only j in {1, 2} is supported")
        return out[0] if single else out

    def to_json(self) -> str:
        return json.dumps(self.descriptor, sort_keys=True)


def frobenius(a: np.ndarray) -> np.ndarray:
    return np.sqrt((a.reshape(a.shape[0], -1) ** 2).sum(axis=1))


# constructors -------------------------------------------------------------

def constant_field(m: int, value, target: TargetManifold | None = None) -> MapField:
    v = np.asarray(value, dtype=float).ravel()
    nu = v.size

    def f(x):
        return np.broadcast_to(v, (x.shape[0], nu)).copy()

    def jac(x):
        return np.zeros((x.shape[0], nu, m))

    return MapField(m, nu, f, PieceSet([], m), target, jac,
                    {"constructor": "constant", "m": m, "value": v.tolist()}, faces=(), crossings=0)


def radial_field(m: int = 2, center=None) -> MapField:
    """x -> (x - c)/|x - c|, the degree-one vortex for m = 2."""
    c = np.zeros(m) if center is None else np.asarray(center, dtype=float)

    def f(x):
        y = x - c
        return y / np.linalg.norm(y, axis=1, keepdims=True)

    def jac(x):
        y = x - c
        r = np.linalg.norm(y, axis=1)
        u = y / r[:, None]
        return (np.eye(m)[None] - u[:, :, None] * u[:, None, :]) / r[:, None, None]

    sing = PieceSet([AffinePiece.point(c)], m)
    return MapField(m, m, f, sing, Sphere(m - 1), jac,
                    {"constructor": "radial", "m": m, "center": c.tolist()}, crossings=0)


def linear_field(A, b=None) -> MapField:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nu, m = A.shape
    bb = np.zeros(nu) if b is None else np.asarray(b, dtype=float)

    def f(x):
        return x @ A.T + bb

    def jac(x):
        return np.broadcast_to(A, (x.shape[0], nu, m)).copy()

    return MapField(m, nu, f, PieceSet([], m), None, jac,
                    {"constructor": "linear", "A": A.tolist(), "b": bb.tolist()}, faces=(), crossings=0)


def step_field(m: int = 2, half: float = 2.0) -> MapField:
    """sign(x_1) as a scalar field; jumps across the hyperplane x_1 = 0."""

    def f(x):
        return np.where(x[:, :1] >= 0, 1.0, -1.0)

    def jac(x):
        return np.zeros((x.shape[0], 1, m))

    tangents = np.eye(m)[1:]
    sing = PieceSet([AffinePiece(np.zeros(m), tangents, np.full(m - 1, half))], m)
    return MapField(m, 1, f, sing, None, jac, {"constructor": "step", "m": m}, crossings=0)


def twisted_vortex(amplitude: float = 0.1, frequency: float = 6.0) -> MapField:
    """x/|x| composed with the rotation by amplitude*sin(frequency*|x|).

    The twist is a diffeomorphism for every amplitude and equals the
    identity to first order at the origin.
    """

    def warp(x):
        r = np.linalg.norm(x, axis=1)
        a = amplitude * np.sin(frequency * r)
        c, s = np.cos(a), np.sin(a)
        return np.stack([c * x[:, 0] - s * x[:, 1], s * x[:, 0] + c * x[:, 1]], axis=1)

    def f(x):
        y = warp(x)
        return y / np.linalg.norm(y, axis=1, keepdims=True)

    return MapField(2, 2, f, PieceSet([AffinePiece.point(np.zeros(2))], 2), Sphere(1), None,
                    {"constructor": "twisted_vortex", "amplitude": amplitude, "frequency": frequency},
                    crossings=0)


def torus_vortex(minor_angle: float = np.pi) -> MapField:
    """Winds once around the torus axis along small circles about 0, at a fixed
    angle around the tube.

    The default sits on the inner equator, where projecting a mollification
    returns to the same circle; other angles drift inward near 0.
    """
    t = Torus()
    rad = t.major + t.minor * np.cos(minor_angle)
    height = t.minor * np.sin(minor_angle)

    def f(x):
        d = x / np.linalg.norm(x, axis=1, keepdims=True)
        return np.concatenate([rad * d, np.full((len(x), 1), height)], axis=1)

    return MapField(2, 3, f, PieceSet([AffinePiece.point(np.zeros(2))], 2), t, None,
                    {"constructor": "torus_vortex", "minor_angle": minor_angle}, crossings=0)


def winding_number(values: np.ndarray) -> float:
    """Total turning of a closed loop of plane vectors, in turns."""
    v = np.asarray(values, dtype=float)
    ang = np.arctan2(v[:, 1], v[:, 0])
    step = np.diff(np.concatenate([ang, ang[:1]]))
    step = (step + np.pi) % (2 * np.pi) - np.pi
    return float(step.sum() / (2 * np.pi))


def sup_circle(center, radius: float, n: int = 400, axes=(0, 1), m: int = 2) -> np.ndarray:
    """Counterclockwise loop on the sup-norm circle of `radius` in the plane of `axes`."""
    t = np.linspace(0, 8, n, endpoint=False)
    side = np.floor(t).astype(int)
    f = t - side
    # walk the square starting at (1, -1) going up
    corners = np.array([[1, -1], [1, 1], [-1, 1], [-1, -1]], dtype=float)
    k = side // 2
    s = (side % 2) * 0.5 + f * 0.5
    pts2 = corners[k] + (corners[(k + 1) % 4] - corners[k]) * s[:, None]
    out = np.tile(np.asarray(center, dtype=float), (n, 1)) if np.ndim(center) else np.zeros((n, m))
    out[:, axes[0]] += radius * pts2[:, 0]
    out[:, axes[1]] += radius * pts2[:, 1]
    return out


# rigid maps ---------------------------------------------------------------

class _RigidData:
    """Cell data of a rigid map: lattice phases for l = 1, parities for l = 0."""

    def __init__(self, c: Cubication, ell: int, degree: int):
        self.m = c.m
        self.N = c.per_axis
        self.eta = float(c.eta)
        self.ell = ell
        self.degree = degree
        if ell == 1:
            self._phases()

    def gauge(self, axis: int, mid: np.ndarray) -> np.ndarray:
        """Edge increment along `axis` at lattice midpoints `mid` (n, m).

        A_i(r) = pi * sum_j sign(i - j) r_j has lattice curl 2 pi on every
        unit face, so each dual piece is encircled once per unit degree.
        """
        r = mid - self.N / 2.0
        sgn = np.sign(axis - np.arange(self.m))
        return self.degree * np.pi * (r * sgn).sum(axis=1)

    def _phases(self):
        shape = (self.N + 1,) * self.m
        theta = np.zeros(shape)
        # lexicographic order visits n - e_a before n
        for n in np.ndindex(*shape):
            nz = [a for a in range(self.m) if n[a] > 0]
            if not nz:
                continue
            a = nz[-1]
            prev = list(n)
            prev[a] -= 1
            mid = np.array(prev, dtype=float)
            mid[a] += 0.5
            theta[n] = theta[tuple(prev)] + self.gauge(a, mid[None])[0]
        self.theta = theta
        self._check_phases()

    def _check_phases(self):
        shape = self.theta.shape
        idx = np.indices(shape).reshape(self.m, -1).T
        for ax in range(self.m):
            ok = idx[:, ax] < self.N
            lo = idx[ok]
            hi = lo.copy()
            hi[:, ax] += 1
            mid = lo.astype(float)
            mid[:, ax] += 0.5
            diff = self.theta[tuple(hi.T)] - self.theta[tuple(lo.T)] - self.gauge(ax, mid)
            resid = np.abs((diff + np.pi) % (2 * np.pi) - np.pi)
            if resid.max() > 1e-9:
                bad = lo[int(np.argmax(resid))]
                raise ConstructionError(f"phase data inconsistent on the edge at vertex {bad.tolist()} along axis {ax}")

    def locate(self, x: np.ndarray):
        """Cube index and local coordinates (clipped cube index outside Q)."""
        cube = np.clip(np.floor((x + 1) / (2 * self.eta)).astype(int), 0, self.N - 1)
        center = -1 + (2 * cube + 1) * self.eta
        return cube, (x - center) / self.eta

    def eval(self, x: np.ndarray) -> np.ndarray:
        cube, z = self.locate(x)
        order = np.argsort(-np.abs(z), axis=1, kind="stable")
        n = x.shape[0]
        pinned = order[:, : self.m - self.ell]
        rows = np.arange(n)[:, None]
        vertex = cube.copy()
        vertex[rows, pinned] += (z[rows, pinned] > 0).astype(int)
        if self.ell == 0:
            val = np.where(vertex.sum(axis=1) % 2 == 0, 1.0, -1.0)
            return val[:, None]
        free = order[:, self.m - 1]
        scale = np.abs(z[rows[:, 0], order[:, self.m - 2]])
        w = z[np.arange(n), free] / np.where(scale > 0, scale, np.nan)
        s = (w + 1) / 2
        mid = vertex.astype(float)
        mid[np.arange(n), free] += 0.5
        inc = np.empty(n)
        for ax in range(self.m):
            sel = free == ax
            if sel.any():
                inc[sel] = self.gauge(ax, mid[sel])
        ang = self.theta[tuple(vertex.T)] + inc * s
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def build_rigid_map(c: Cubication, ell: int, t: TargetManifold, seed: str = "vortex",
                    degree: int = 1, value=None) -> MapField:
    """Rigid map singular exactly on the dual skeleton of `c`.

    Cell data on the ell-skeleton comes from `seed`, then each cube is
    filled by iterated homogeneous extension: in cube-local coordinates
    the m - ell largest |z_i| are pinned to their signs and the remaining
    ones are divided by the smallest pinned magnitude.
    """
    if not (0 <= ell <= c.m - 1):
        raise ConstructionError(f"need 0 <= ell <= m-1, got ell={ell}")
    m = c.m
    desc = {"constructor": "rigid", "m": m, "eta": str(c.eta), "ell": ell, "target": t.name,
            "seed": seed, "degree": degree}
    if seed == "constant":
        v = np.asarray(value, dtype=float) if value is not None else t.sample(1, np.random.default_rng(0))[0]
        if t.dist_to_manifold(v[None])[0] > 1e-10:
            raise ConstructionError("constant seed value is not on the target")
        f = constant_field(m, v, t)
        f.descriptor = desc | {"value": v.tolist()}
        return f
    if seed != "vortex":
        raise ConstructionError(f"unknown seed {seed!r}")
    ok = (ell == 1 and isinstance(t, Sphere) and t.N == 1) or (ell == 0 and isinstance(t, Sphere) and t.N == 0)
    if not ok:
        first = dual_skeleton(c, ell).pieces[0] if ell < m else None
        raise ConstructionError(
            f"vortex seed needs target sphere:{ell}; no cell data for {t.name} on the cell dual to {first.to_dict() if first else '?'}")
    data = _RigidData(c, ell, degree)
    dual = dual_skeleton(c, ell)
    sing = PieceSet.from_faces(dual.pieces, m)
    return MapField(m, ell + 1, data.eval, sing, t, None, desc, faces=tuple(dual.pieces))


# class verification --------------------------------------------------------

@dataclass
class ClassReport:
    class_tag: str
    passed: bool
    constants: dict
    band_sups: list
    crossing_count: int
    samples_used: int
    message: str = ""

    def to_dict(self) -> dict:
        return {"class_tag": self.class_tag, "passed": self.passed, "constants": self.constants,
                "band_sups": self.band_sups, "crossing_count": self.crossing_count,
                "samples_used": self.samples_used, "message": self.message}


def singular_crossings(u: MapField, proximity: float = 1e-7) -> int:
    if u.crossings is not None:
        return u.crossings
    if u.faces is not None:
        return len(crossing_points(list(u.faces))) if u.faces else 0
    # labelled groups closer than `proximity` inside the open cube
    labels = u.singular.labels
    groups = {lab: PieceSet([p for p in u.singular.pieces if p.label == lab], u.m) for lab in labels}
    count = 0
    for i, a in enumerate(labels):
        pts = groups[a].sample(4000, np.random.default_rng(i))
        pts = pts[(np.abs(pts) < 1).all(axis=1)]
        for b in labels[i + 1:]:
            if pts.size and groups[b].distance(pts).min() < proximity:
                count += 1
    return count


def _band_points(u: MapField, k: int, n: int, rng, box: float = 1.0) -> np.ndarray:
    lo, hi = 2.0 ** (-k - 1), 2.0 ** (-k)
    got = []
    total = 0
    for _ in range(20):
        cand = u.singular.sample_near(4 * n, lo, hi, rng)
        cand = cand[(np.abs(cand) < box).all(axis=1)]
        d = u.dist(cand) if cand.size else np.zeros(0)
        cand = cand[(d >= lo) & (d < hi)]
        got.append(cand)
        total += len(cand)
        if total >= n:
            break
    pts = np.concatenate(got) if got else np.zeros((0, u.m))
    return pts[:n]


def verify_class(u: MapField, claimed: str, samples_per_band: int = 1000, max_band: int = 10,
                 rng: np.random.Generator | None = None, raise_on_failure: bool = False) -> ClassReport:
    """Check |Du(x)| dist(x, S) is bounded uniformly across dyadic distance bands.

    PASS when every band sup is at most twice the median band sup.  Bands
    with dist > diam/2 are skipped.  Only j = 1 decides the verdict; the
    j = 2 constant is reported when analytic jets exist.
    """
    if claimed not in ("rig", "cros", "uncr", "smooth"):
        raise ValueError(f"unknown class tag {claimed!r}")
    rng = rng or np.random.default_rng(0)
    crossings = singular_crossings(u)
    diam = 2 * np.sqrt(u.m)
    sups = []
    used = 0
    if u.singular.empty:
        pts = rng.uniform(-1, 1, size=(samples_per_band, u.m))
        used = len(pts)
        g = frobenius(u.derivative(pts))
        sups = [float(g.max())]
        finite = np.isfinite(g).all()
        passed = bool(finite)
        msg = "" if finite else "non-finite derivative"
    else:
        for k in range(max_band + 1):
            if 2.0 ** (-k - 1) > diam / 2:
                continue
            pts = _band_points(u, k, samples_per_band, rng)
            if len(pts) == 0:
                continue
            used += len(pts)
            g = frobenius(u.derivative(pts)) * u.dist(pts)
            sups.append(float(np.max(g)))
        arr = np.array(sups)
        med = float(np.median(arr)) if arr.size else 0.0
        passed = bool(arr.size and np.all(arr <= 2 * med + 1e-12) and np.isfinite(arr).all())
        msg = "" if passed else f"band sups not within 2x median ({med:.3g})"
    if claimed == "uncr" and crossings > 0:
        passed = False
        msg = f"claimed uncrossed but the singular set has {crossings} crossings"
    if claimed == "rig" and u.faces is None:
        passed = False
        msg = "singular set is not a dual skeleton"
    if claimed == "smooth" and not u.singular.empty:
        passed = False
        msg = "declared singular set is nonempty"
    constants = {1: max(sups) if sups else 0.0}
    if u.jac is not None and not u.singular.empty:
        pts = _band_points(u, 3, 200, rng)
        if len(pts):
            constants[2] = float((frobenius(u.derivative(pts, 2)) * u.dist(pts) ** 2).max())
    rep = ClassReport(claimed, passed, constants, sups, crossings, used, msg)
    if raise_on_failure and not passed:
        raise ClassificationError(msg)
    return rep


def compose_with_diffeo(u: MapField, phi) -> MapField:
    """u o phi, with singular set the pullback of u's singular set.

    `phi` needs `apply`, `jacobian`, `pullback(...)` and `is_identity`.
    """
    if getattr(phi, "is_identity", False):
        return u
    pull = phi.pullback(u.faces if u.faces else u.singular)
    sing = pull.pieces

    def f(x):
        return u.func(phi.apply(x))

    jac = None
    if u.jac is not None:
        def jac(x):
            return np.einsum("nij,njk->nik", u.jac(phi.apply(x)), phi.jacobian(x))

    desc = {"constructor": "compose", "field": u.descriptor, "diffeo": phi.describe()}
    # a homeomorphism without its own crossing report keeps the input count
    crossings = pull.crossing_count if pull.crossing_count is not None else singular_crossings(u)
    return MapField(u.m, u.nu, f, sing, u.target, jac, desc, faces=None, crossings=crossings)
