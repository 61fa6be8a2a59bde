"""Singular projection of mollified maps.

u is mollified at scale eta, shifted by a small vector a and sent back to
the target by its singular projection P.  The result is smooth away from
the preimage of the shifted singular set, which is located numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyReport, fractional_derivative_at, wsp_distance, wsp_norm_p
from .fields import ClassReport, MapField, fd_jacobian, frobenius, verify_class
from .geometry import AffinePiece, PieceSet
from .grid import DomainError
from .runtime import as_rng
from .targets import Sphere, TargetManifold
from .uncross import UnsupportedError

MAX_DRAWS = 64
SIGMA_MIN = 1e-4


class SelectionError(RuntimeError):
    """No shift passed the acceptance tests."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# mollifier ---------------------------------------------------------------------------

def bump(r2):
    """exp(-1/(1 - |z|^2)) inside the unit ball, 0 outside (unnormalized)."""
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    inside = r2 < 1
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def bump_mass(m: int, order: int = 400) -> float:
    """Integral of the unnormalized bump over R^m by radial Gauss-Legendre.

    The integrand vanishes to infinite order at r = 1 so the rule converges
    faster than any power.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    r = 0.5 * (x + 1)
    radial = 0.5 * float(np.sum(w * bump(r * r) * r ** (m - 1)))
    return 2.0 * math.pi ** (m / 2) / math.gamma(m / 2) * radial


def _composite_gauss(order: int, panels: int):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1, 1, panels + 1)
    half = (edges[1:] - edges[:-1]) / 2
    mid = (edges[1:] + edges[:-1]) / 2
    nodes = (mid[:, None] + half[:, None] * x[None]).ravel()
    weights = (half[:, None] * w[None]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes z in the unit ball and weights summing to one for phi(z) dz.

    `slopes` holds grad(phi)/phi at the nodes, so weights * slopes integrate
    against grad(phi) dz.
    """

    nodes: np.ndarray
    weights: np.ndarray
    raw_mass: float  # sum of the unnormalized weights times the normalization
    slopes: np.ndarray

    @classmethod
    def build(cls, m: int, order: int, panels: int) -> "QuadratureRule":
        x, w = _composite_gauss(order, panels)
        grids = np.meshgrid(*([x] * m), indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=1)
        wg = np.meshgrid(*([w] * m), indexing="ij")
        wz = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
        phi = bump((z * z).sum(axis=1)) / bump_mass(m)
        keep = phi > 0
        raw = wz[keep] * phi[keep]
        zk = z[keep]
        slopes = -2 * zk / (1 - (zk * zk).sum(axis=1, keepdims=True)) ** 2
        return cls(zk, raw / raw.sum(), float(raw.sum()), slopes)


class Mollifier:
    """phi_eta(x) = eta^-m phi(x / eta) with phi the normalized bump.

    Away from the singular set of u a single 8^m Gauss panel is accurate;
    within 1.25 eta of it the integrand is singular and a composite rule
    with `near_panels` panels per axis is used.  Both rules are symmetric
    under coordinate reflections and swaps, and neither has a node at 0.
    """

    def __init__(self, m: int, eta: float, order: int = 8, near_panels: int | None = None):
        if eta <= 0:
            raise DomainError("eta > 0 required")
        self.m = m
        self.eta = float(eta)
        self.far = QuadratureRule.build(m, order, 1)
        if near_panels is None:
            near_panels = 6 if m <= 2 else 2
        self.near = QuadratureRule.build(m, order, near_panels)

    def integral_error(self) -> float:
        """|sum of the discrete weights before normalization - 1| for the far rule."""
        return abs(self.far.raw_mass - 1.0)

    def convolve(self, u: MapField, x: np.ndarray, chunk: int = 200_000, gradient: bool = False) -> np.ndarray:
        """phi_eta * u at x, or its jacobian (n, nu, m) when `gradient`."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((len(x), u.nu, self.m)) if gradient else np.empty((len(x), u.nu))
        near = u.singular.distance(x) < 1.25 * self.eta if not u.singular.empty else np.zeros(len(x), bool)
        for mask, rule in ((~near, self.far), (near, self.near)):
            rows = np.nonzero(mask)[0]
            if rows.size == 0:
                continue
            per = max(1, chunk // len(rule.weights))
            for s in range(0, rows.size, per):
                r = rows[s:s + per]
                pts = (x[r, None, :] - self.eta * rule.nodes[None]).reshape(-1, self.m)
                vals = u.func(pts).reshape(len(r), len(rule.weights), u.nu)
                ok = np.isfinite(vals).all(axis=2)
                wts = np.where(ok, rule.weights[None], 0.0)
                # a node landing on the singular set is dropped and the rest renormalized
                vals = np.where(ok[..., None], vals, 0.0)
                if gradient:
                    # d/dx of u(x - eta z) weighted by phi(z) is grad(phi)(z) u(x - eta z) / eta
                    out[r] = np.einsum("nq,qj,nqk->nkj", wts, rule.slopes, vals) / self.eta
                    continue
                wts /= wts.sum(axis=1, keepdims=True)
                out[r] = np.einsum("nq,nqk->nk", wts, vals)
        return out


class Lattice:
    """Values on a regular grid with tensor cubic Lagrange interpolation."""

    def __init__(self, lo: np.ndarray, pitch: float, values: np.ndarray):
        self.lo = np.asarray(lo, dtype=float)
        self.pitch = float(pitch)
        self.values = values  # shape (n_1, ..., n_m, nu)
        self.shape = np.array(values.shape[:-1])

    @property
    def hi(self) -> np.ndarray:
        return self.lo + (self.shape - 1) * self.pitch

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        m = x.shape[1]
        t = (x - self.lo) / self.pitch
        base = np.floor(t).astype(int) - 1
        base = np.clip(base, 0, self.shape - 4)
        f = t - base  # position inside the 4-point stencil, in [1, 2] normally
        if ((x < self.lo - 1e-12) | (x > self.hi + 1e-12)).any():
            raise DomainError("evaluation outside the mollification lattice")
        # Lagrange weights at stencil nodes 0..3
        w = np.empty((len(x), m, 4))
        for k in range(4):
            others = [j for j in range(4) if j != k]
            num = np.ones_like(f)
            for j in others:
                num = num * (f - j)
            den = float(np.prod([k - j for j in others]))
            w[:, :, k] = num / den
        out = np.zeros((len(x), self.values.shape[-1]))
        for offs in np.ndindex(*([4] * m)):
            idx = tuple(base[:, a] + offs[a] for a in range(m))
            wt = np.prod([w[:, a, offs[a]] for a in range(m)], axis=0)
            out += wt[:, None] * self.values[idx]
        return out


def mollify(u: MapField, eta: float, margin: float | None = None, pitch: float | None = None,
            lattice: bool | None = None, order: int = 8, near_panels: int | None = None) -> MapField:
    """phi_eta * u as a smooth MapField on Q^m enlarged by `margin` (default 2 eta).

    For m <= 2 the convolution is tabulated on a lattice of pitch eta/16 and
    interpolated; otherwise every evaluation runs the quadrature.
    """
    mol = Mollifier(u.m, eta, order, near_panels)
    margin = 2 * eta if margin is None else margin
    lattice = u.m <= 2 if lattice is None else lattice
    lim = 1.0 + margin
    desc = {"constructor": "mollify", "eta": eta, "margin": margin, "field": u.descriptor}
    if lattice:
        h = eta / 16 if pitch is None else pitch
        n = int(math.ceil(2 * lim / h)) + 1
        n += 1 - n % 2  # odd, so the origin is a node
        # symmetric about the origin so reflection symmetries of u survive
        lo = -0.5 * (n - 1) * h
        axis = lo + h * np.arange(n)
        grids = np.meshgrid(*([axis] * u.m), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        vals = mol.convolve(u, pts).reshape(*([n] * u.m), u.nu)
        table = Lattice(np.full(u.m, lo), h, vals)
        func = table
        desc["pitch"] = h
    else:
        def func(x):
            x = np.atleast_2d(x)
            if (np.abs(x) > lim + 1e-12).any():
                raise DomainError(f"evaluation outside Q^m enlarged by {margin}")
            return mol.convolve(u, x)
    out = MapField(u.m, u.nu, func, PieceSet([], u.m), None, None, desc, faces=(), crossings=0)
    out.mollifier = mol
    return out


# convolution estimates -----------------------------------------------------------------

@dataclass
class MollifierFit:
    etas: list
    c_value: list       # sup of |u_eta - u| / (eta^sigma D)
    c_derivative: list  # sup of |D u_eta| / (eta^(sigma - 1) D)
    counterexamples: list = field(default_factory=list)

    def growth(self, which: str = "value") -> float:
        vals = np.asarray(self.c_value if which == "value" else self.c_derivative, float)
        vals = vals[np.isfinite(vals) & (vals > 0)]
        return float(vals.max() / vals.min()) if vals.size else 1.0

    @property
    def passed(self) -> bool:
        return not self.counterexamples and self.growth("value") <= 1.25 and self.growth("derivative") <= 1.25

    def to_dict(self) -> dict:
        return {"etas": self.etas, "c_value": self.c_value, "c_derivative": self.c_derivative,
                "growth_value": self.growth("value"), "growth_derivative": self.growth("derivative"),
                "passed": self.passed, "counterexamples": self.counterexamples}


def estimate_points(u: MapField, n: int, margin: float, rng=None, r_lo: float = 4e-3,
                    r_hi: float = 0.6) -> np.ndarray:
    """n points at log-uniform distance from the singular set, inside the cube shrunk by margin."""
    rng = as_rng(rng)
    half = 1.0 - margin
    if u.singular.empty:
        return rng.uniform(-half, half, size=(n, u.m))
    got, total = [], 0
    for _ in range(50):
        cand = u.singular.sample_near(4 * n, r_lo, r_hi, rng)
        cand = cand[(np.abs(cand) < half).all(axis=1)]
        got.append(cand)
        total += len(cand)
        if total >= n:
            break
    return np.concatenate(got)[:n]


def mollifier_estimate_check(u: MapField, sigma: float, p: float, etas=(0.2, 0.1, 0.05),
                             points: np.ndarray | None = None, n_points: int = 200,
                             samples: int = 20_000, rng=None, tol: float = 1e-9) -> MollifierFit:
    """Fit the constants of |u_eta - u| <= C eta^sigma D and |D u_eta| <= C' eta^(sigma-1) D,
    D the pointwise fractional derivative of order sigma, over sample points."""
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    rng = as_rng(rng)
    if points is None:
        points = estimate_points(u, n_points, max(etas) * 1.01, rng)
    points = np.atleast_2d(points)
    if (1 - np.abs(points).max(axis=1) <= max(etas)).any():
        raise DomainError("sample points must lie farther than eta from the boundary")
    D = np.array([fractional_derivative_at(u, sigma, p, x, samples=samples, rng=rng) for x in points])
    ux = u.func(points)
    mol_c, mol_d, bad = [], [], []
    for eta in etas:
        mol = Mollifier(u.m, eta)
        ue = mol.convolve(u, points)
        lhs = np.linalg.norm(ue - ux, axis=1)
        dl = frobenius(mol.convolve(u, points, gradient=True))
        zero = D <= 0
        for i in np.nonzero(zero & ((lhs > tol) | (dl > tol)))[0]:
            bad.append({"eta": eta, "x": points[i].tolist(), "lhs": float(lhs[i])})
        with np.errstate(divide="ignore", invalid="ignore"):
            mol_c.append(float(np.max(np.where(zero, 0.0, lhs / (eta ** sigma * D)))))
            mol_d.append(float(np.max(np.where(zero, 0.0, dl / (eta ** (sigma - 1) * D)))))
    return MollifierFit(list(etas), mol_c, mol_d, bad)


# preimages of the shifted singular set ---------------------------------------------

def _winding(vals: np.ndarray) -> np.ndarray:
    """Winding numbers of closed loops of plane vectors, loops along axis 1."""
    ang = np.arctan2(vals[..., 1], vals[..., 0])
    step = np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)
    step = (step + np.pi) % (2 * np.pi) - np.pi
    return np.rint(step.sum(axis=1) / (2 * np.pi)).astype(int)


def _cell_loops(lo: np.ndarray, size: np.ndarray, per_edge: int) -> np.ndarray:
    """(cells, 4*per_edge, 2) counterclockwise boundary points of squares."""
    s = np.arange(per_edge) / per_edge
    unit = np.concatenate([
        np.stack([s, 0 * s], 1), np.stack([1 + 0 * s, s], 1),
        np.stack([1 - s, 1 + 0 * s], 1), np.stack([0 * s, 1 - s], 1)])
    return lo[:, None, :] + size[:, None, None] * unit[None]


def _zeros_2d(F, lo: float, hi: float, pitch: float, tol: float = 1e-8, per_edge: int = 8):
    """Isolated zeros of F: R^2 -> R^2 in [lo, hi]^2 by winding-number bisection.

    F takes (n, 2) points.  Candidate cells are those where both components
    change sign at the corners; a cell is kept while its boundary winding
    is nonzero and split in four until its side is below tol.
    """
    # an irrational offset keeps lattice nodes off symmetric zeros
    off = 0.38196601125 * pitch
    ax = np.arange(lo - off, hi + pitch, pitch)
    ax = ax[ax <= hi + pitch]
    g1, g2 = np.meshgrid(ax, ax, indexing="ij")
    vals = F(np.stack([g1.ravel(), g2.ravel()], 1)).reshape(len(ax), len(ax), 2)
    sgn = np.sign(vals)
    cand = np.ones((len(ax) - 1, len(ax) - 1), dtype=bool)
    for c in range(2):
        s = sgn[..., c]
        quad = np.stack([s[:-1, :-1], s[1:, :-1], s[:-1, 1:], s[1:, 1:]])
        cand &= (quad.max(axis=0) >= 0) & (quad.min(axis=0) <= 0)
    i, j = np.nonzero(cand)
    cells = np.stack([ax[i], ax[j]], 1)
    size = np.full(len(cells), pitch)
    zeros, degrees = [], []
    while len(cells):
        loops = _cell_loops(cells, size, per_edge)
        wv = F(loops.reshape(-1, 2)).reshape(len(cells), -1, 2)
        w = _winding(wv)
        keep = w != 0
        cells, size, w = cells[keep], size[keep], w[keep]
        done = size < tol
        for c, sz, d in zip(cells[done], size[done], w[done]):
            zeros.append(c + sz / 2)
            degrees.append(int(d))
        cells, size = cells[~done], size[~done]
        if not len(cells):
            break
        half = size / 2
        kids = [cells, cells + np.stack([half, 0 * half], 1), cells + np.stack([0 * half, half], 1),
                cells + half[:, None]]
        cells = np.concatenate(kids)
        size = np.concatenate([half] * 4)
    pts = np.array(zeros).reshape(-1, 2)
    # zeros on a shared cell edge are found twice
    keep = []
    for k, p in enumerate(pts):
        if all(np.linalg.norm(p - pts[q]) > 10 * tol for q in keep):
            keep.append(k)
    return pts[keep], [degrees[k] for k in keep]


def _zeros_1d(F, lo: float, hi: float, pitch: float, tol: float = 1e-8):
    """Zeros of F: R -> R^k with k >= 2 (generically none): local minima of |F|
    refined by ternary search, kept when |F| < tol."""
    x = np.arange(lo, hi + pitch / 2, pitch)
    mag = np.linalg.norm(F(x[:, None]), axis=1)
    idx = np.nonzero((mag[1:-1] <= mag[:-2]) & (mag[1:-1] <= mag[2:]))[0] + 1
    out = []
    for i in idx:
        a, b = x[i - 1], x[i + 1]
        while b - a > tol:
            m1, m2 = a + (b - a) / 3, b - (b - a) / 3
            f1, f2 = (np.linalg.norm(F(np.array([[m]]))) for m in (m1, m2))
            if f1 < f2:
                b = m2
            else:
                a = m1
        c = 0.5 * (a + b)
        if np.linalg.norm(F(np.array([[c]]))) < tol:
            out.append([c])
    return np.array(out).reshape(-1, 1), [1] * len(out)


@dataclass
class Preimage:
    points: np.ndarray      # (n, m)
    components: list        # index of the singular-set component hit
    degrees: list

    def pieces(self, m: int) -> PieceSet:
        return PieceSet([AffinePiece.point(p, int(c)) for p, c in zip(self.points, self.components)], m)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "components": self.components, "degrees": self.degrees}


def locate_preimage(u_eta: MapField, a, t: TargetManifold, pitch: float, tol: float = 1e-8) -> Preimage:
    """Points x in Q^m with u_eta(x) - a on the singular set of the projection.

    Each component of the singular set is the zero set of a map R^nu -> R^c;
    composing with u_eta - a gives a map R^m -> R^c whose zeros are found by
    lattice bracketing and bisection.  Supported when m <= 2 and c = m, or
    m = 1 (isolated zeros then have measure zero and are reported if hit).
    """
    a = np.asarray(a, dtype=float)
    pts, comps, degs = [], [], []
    for k, G in enumerate(t.sigma_defining_maps()):
        def F(x, G=G):
            return G(u_eta.func(x) - a)

        if u_eta.m == 1:
            z, d = _zeros_1d(F, -1.0, 1.0, pitch, tol)
        elif u_eta.m == 2:
            if G(np.zeros((1, len(a)))).shape[1] != 2:
                raise UnsupportedError("planar preimages need a codimension-2 singular set")
            z, d = _zeros_2d(F, -1.0, 1.0, pitch, tol)
        else:
            raise UnsupportedError("preimages are located for m <= 2 only")
        inside = (np.abs(z) <= 1).all(axis=1)
        pts.extend(z[inside])
        comps.extend([k] * int(inside.sum()))
        degs.extend([dd for dd, ok in zip(d, inside) if ok])
    arr = np.array(pts).reshape(-1, u_eta.m)
    return Preimage(arr, comps, degs)


# the projection run -----------------------------------------------------------------

def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3 - 2 * t)


@dataclass
class ProjectionRun:
    u: MapField
    target: TargetManifold
    eta: float
    u_eta: MapField = None
    diagnostics: dict = field(default_factory=dict)
    shift: np.ndarray | None = None

    def __post_init__(self):
        if self.u_eta is None:
            self.u_eta = mollify(self.u, self.eta)

    @property
    def alpha(self) -> float:
        return self.target.sep / 4

    def psi(self, y):
        """0 within alpha of the singular set, 1 beyond 2 alpha."""
        d = self.target.dist_to_sigma(y)
        return smoothstep((d - self.alpha) / self.alpha)

    @property
    def pitch(self) -> float:
        return self.eta / 8


def shifted_projection(u_eta: MapField, a, t: TargetManifold, pitch: float | None = None,
                       preimage: Preimage | None = None) -> MapField:
    """P(u_eta - a) with singular set the located preimage of the singular set of P."""
    a = np.asarray(a, dtype=float)
    eta = u_eta.descriptor.get("eta", 0.1)
    pre = preimage if preimage is not None else locate_preimage(u_eta, a, t, pitch or eta / 8)

    def f(x):
        return t._project(u_eta.func(x) - a)

    out = MapField(u_eta.m, t.ambient_dim, f, pre.pieces(u_eta.m), t, None,
                   {"constructor": "shifted_projection", "shift": a.tolist(), "mollified": u_eta.descriptor},
                   crossings=0)
    out.preimage = pre
    return out


def cutoff_split(run: ProjectionRun, a, v: MapField | None = None):
    """(w, y) with w = psi(u_eta - a) v and y = (1 - psi(u_eta - a)) v."""
    a = np.asarray(a, dtype=float)
    v = v if v is not None else shifted_projection(run.u_eta, a, run.target, run.pitch)

    def weight(x):
        return run.psi(run.u_eta.func(x) - a)[:, None]

    def wf(x):
        return weight(x) * v.func(x)

    def yf(x):
        return (1 - weight(x)) * v.func(x)

    w = MapField(v.m, v.nu, wf, v.singular, None, None, {"constructor": "cutoff_w", "shift": a.tolist()},
                 crossings=0)
    y = MapField(v.m, v.nu, yf, v.singular, None, None, {"constructor": "cutoff_y", "shift": a.tolist()},
                 crossings=0)
    return w, y


@dataclass
class TransversalityReport:
    c_fit: float
    sigma_min: list
    flagged: bool
    points: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def transversality_report(u_eta: MapField, a, t: TargetManifold, preimage: Preimage,
                          samples: int = 2000, margin: float = 0.0, rng=None) -> TransversalityReport:
    """Smallest singular value of the normal part of D(u_eta) at each preimage
    point, and the fitted C in dist(x, S) <= C dist(u_eta(x) - a, Sigma)."""
    rng = as_rng(rng)
    a = np.asarray(a, dtype=float)
    maps = t.sigma_defining_maps()
    smin = []
    for p, k in zip(preimage.points, preimage.components):
        x = p[None]
        J = fd_jacobian(u_eta.func, x, np.array([np.inf]), h0=1e-6 * max(u_eta.descriptor.get("eta", 1.0), 1e-3))
        y = u_eta.func(x) - a
        G = maps[k]
        JG = fd_jacobian(G, y, np.array([np.inf]), h0=1e-7)
        smin.append(float(np.linalg.svd(JG[0] @ J[0], compute_uv=False).min()))
    c_fit = math.nan
    if len(preimage.points):
        half = 1.0 - margin
        x = rng.uniform(-half, half, size=(samples, u_eta.m))
        dS = preimage.pieces(u_eta.m).distance(x)
        dv = t.dist_to_sigma(u_eta.func(x) - a)
        with np.errstate(divide="ignore"):
            c_fit = float(np.max(dS / np.maximum(dv, 1e-300)))
    flagged = any(s < SIGMA_MIN for s in smin)
    return TransversalityReport(c_fit, smin, flagged, len(preimage.points))


def _ball_shift(rng, nu: int, radius: float) -> np.ndarray:
    g = rng.normal(size=nu)
    g /= np.linalg.norm(g)
    return g * radius * rng.uniform() ** (1.0 / nu)


@dataclass
class ShiftAverage:
    mean: float
    stderr: float
    values: list
    shifts: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def average_over_shifts(run: ProjectionRun, p: float, s: float, n_shifts: int = 16,
                        samples: int = 50_000, rng=None) -> ShiftAverage:
    """Mean over a uniform in the ball of radius alpha of the W^{s,p} norm^p of y."""
    if n_shifts < 16:
        raise ValueError("n_shifts >= 16 required")
    rng = as_rng(rng)
    vals, shifts = [], []
    for _ in range(n_shifts):
        a = _ball_shift(rng, run.target.ambient_dim, run.alpha)
        _, y = cutoff_split(run, a)
        rep = wsp_norm_p(y, s, p, samples=samples, rng=rng)
        if rep.diverged:
            raise ArithmeticError(f"norm of y diverged at shift {a.tolist()}: {rep.terms}")
        vals.append(rep.value)
        shifts.append(a.tolist())
    arr = np.array(vals)
    out = ShiftAverage(float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr))), vals, shifts)
    run.diagnostics["average"] = out.to_dict()
    return out


def markov_threshold(mean: float) -> float:
    """Bound on ||y||^p for an acceptable shift.

    The square root of the average is the asymptotic choice; while the
    average exceeds 1/4 the plain Markov bound 2*mean is the larger and
    still accepts at least half of all shifts.
    """
    return max(math.sqrt(mean), 2.0 * mean)


def select_shift(run: ProjectionRun, p: float, s: float, average: ShiftAverage,
                 samples: int = 50_000, rng=None, proposal_radius: float | None = None,
                 max_draws: int = MAX_DRAWS):
    """First drawn shift passing the Markov bound and the transversality check.

    Shifts are drawn uniformly from the ball of radius `proposal_radius`
    (default alpha * eta^3, inside the ball of radius alpha).
    """
    rng = as_rng(rng)
    radius = run.alpha * run.eta ** 3 if proposal_radius is None else proposal_radius
    if radius >= run.alpha:
        radius = run.alpha * (1 - 1e-12)
    bound = markov_threshold(average.mean)
    tried = []
    for draw in range(1, max_draws + 1):
        a = _ball_shift(rng, run.target.ambient_dim, radius)
        pre = locate_preimage(run.u_eta, a, run.target, run.pitch)
        tr = transversality_report(run.u_eta, a, run.target, pre, rng=rng)
        v = shifted_projection(run.u_eta, a, run.target, preimage=pre)
        _, y = cutoff_split(run, a, v)
        norm = wsp_norm_p(y, s, p, samples=samples, rng=rng)
        tried.append({"shift": a.tolist(), "norm_p": norm.value, "flagged": tr.flagged})
        if norm.value <= bound and not tr.flagged:
            run.shift = a
            run.diagnostics.update({"draws": draw, "threshold": bound, "norm_p": norm.value,
                                    "transversality": tr.to_dict(), "preimage": pre.to_dict()})
            return a, v, tr
    raise SelectionError(f"no acceptable shift in {max_draws} draws", {"threshold": bound, "tried": tried})


@dataclass
class ProjectionStep:
    eta: float
    field: MapField
    distance: EnergyReport
    report: ClassReport
    average: ShiftAverage
    diagnostics: dict

    def row(self) -> dict:
        return {"eta": self.eta, "distance": self.distance.value, "stderr": self.distance.stderr,
                "average": self.average.mean, "average_stderr": self.average.stderr,
                "class": self.report.passed, "draws": self.diagnostics.get("draws")}


def projection_pipeline(u: MapField, t: TargetManifold, s: float, p: float, etas, n_shifts: int = 16,
                        samples: int = 50_000, distance_samples: int = 200_000, rng=None,
                        on_step=None) -> list[ProjectionStep]:
    """For each eta: mollify, average the remainder over shifts, select a shift and
    measure the W^{s,p} distance of the projected map to u."""
    rng = as_rng(rng)
    tag = "uncr" if isinstance(t, Sphere) else "cros"
    steps = []
    for eta in etas:
        run = ProjectionRun(u, t, eta)
        avg = average_over_shifts(run, p, s, n_shifts, samples, rng)
        a, v, _ = select_shift(run, p, s, avg, samples, rng)
        dist = wsp_distance(v, u, s, p, samples=distance_samples, rng=rng)
        rep = verify_class(v, tag, rng=rng) if not v.singular.empty else verify_class(v, "smooth", rng=rng)
        step = ProjectionStep(eta, v, dist, rep, avg, run.diagnostics)
        steps.append(step)
        if on_step is not None:
            on_step(step)
    return steps
