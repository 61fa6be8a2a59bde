"""Local diffeomorphisms that pull a dual skeleton back to a crossing-free set.

Each block pushes points radially away from an apex sitting just above
the top face of Q^m.  The push happens in distorted coordinates

    Y = (x' - c', -g(depth)),   depth = 1 + eps - x_v,

where x' are the cross-section coordinates, x_v the vertical one and g a
piecewise-linear depth profile that makes the sup-norm ball N(Y) < r the
box of cross half-width r reaching down to -1 + eta - r.  The radial
profile R sends the ball of radius r_out onto the shell r_in <= N < r_out
and is the identity from r_out on, so each block is the identity outside
its support, exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import AffinePiece, PieceSet, count_components, polyline_min_distance
from .grid import Crossing, Cubication, DomainError, Face, crossing_points, dual_skeleton


class ConstructionError(ValueError):
    pass


class UnsupportedError(NotImplementedError):
    pass


class PipelineError(RuntimeError):
    pass


def _rows(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


# radial profile -------------------------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """R(r) = r + r_in (1 - r/r_out)^k below r_out, identity above.

    k = (1 + r_out/r_in)/2 > 1 keeps R' >= (r_out - r_in)/(2 r_out) > 0 and
    R is C^1 at r_out.
    """

    r_in: float
    r_out: float

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise DomainError(f"need 0 < r_in < r_out, got {self.r_in}, {self.r_out}")

    @property
    def k(self) -> float:
        return 0.5 * (1 + self.r_out / self.r_in)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        t = np.clip(1 - r / self.r_out, 0, None)
        return r + self.r_in * t ** self.k

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        t = np.clip(1 - r / self.r_out, 0, None)
        return 1 - self.r_in * self.k / self.r_out * t ** (self.k - 1)

    def inverse(self, s, tol: float = 1e-10):
        """Bisection on [0, r_out]; s must lie in [r_in, r_out]."""
        s = np.asarray(s, dtype=float)
        if np.any(s < self.r_in * (1 - 1e-12)) or np.any(s > self.r_out * (1 + 1e-12)):
            raise PipelineError("radial inverse called outside [r_in, r_out]")
        lo = np.zeros_like(s)
        hi = np.full_like(s, self.r_out)
        while np.max(hi - lo) > tol * self.r_out:
            mid = 0.5 * (lo + hi)
            big = self(mid) > s
            hi = np.where(big, mid, hi)
            lo = np.where(big, lo, mid)
        return 0.5 * (lo + hi)


def theta_block(d: int, mu: float, eta: float, rho_under: float, rho_over: float):
    """Radial push on R^d in the sup norm: Y -> R(|Y|) Y/|Y|.

    Maps Q_{mu eta} minus the origin into Q_{mu eta} minus Q_{rho_under eta}
    and is the identity outside Q_{rho_over eta}.  Returns (forward, profile).
    """
    if not (mu / 2 < rho_under < rho_over < mu):
        raise DomainError(f"need mu/2 < rho_under < rho_over < mu, got {mu}, {rho_under}, {rho_over}")
    prof = RadialProfile(rho_under * eta, rho_over * eta)

    def forward(y):
        y, single = _rows(y)
        if y.shape[1] != d:
            raise DomainError(f"expected points in R^{d}")
        n = np.abs(y).max(axis=1)
        out = y.copy()
        act = (n < prof.r_out) & (n > 0)
        out[act] = y[act] * (prof(n[act]) / n[act])[:, None]
        return out[0] if single else out

    return forward, prof


# blocks -----------------------------------------------------------------------

@dataclass(frozen=True)
class PushBlock:
    """Diffeomorphic radial push below an apex above the face x_v = 1.

    cross: axes measured in the sup norm around `center`.
    dummy: axes left untouched, restricted to |x_a - dummy_center| < dummy_half.
    """

    vertical: int
    cross: tuple
    center: tuple
    r_in: float
    r_out: float
    width: float
    eps: float
    bottom: float
    dummy: tuple = ()
    dummy_center: tuple = ()
    dummy_half: float = math.inf
    tag: str = ""

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out < self.width:
            raise ConstructionError(f"block {self.tag}: need 0 < r_in < r_out < width")

    @property
    def profile(self) -> RadialProfile:
        return RadialProfile(self.r_in, self.r_out)

    @property
    def kappa(self) -> float:
        return self.r_in / 2

    @property
    def offset(self) -> float:
        # depth at which the box bottom sits for radius 0
        return 1 + self.eps - self.bottom

    @property
    def z0(self) -> float:
        return self.offset + self.kappa

    def g(self, z):
        return np.where(z <= self.z0, self.kappa * z / self.z0, z - self.offset)

    def g_inv(self, w):
        return np.where(w <= self.kappa, w * self.z0 / self.kappa, w + self.offset)

    def _gauge(self, x):
        yc = x[:, list(self.cross)] - np.asarray(self.center)
        depth = 1 + self.eps - x[:, self.vertical]
        gv = self.g(depth)
        n = np.maximum(np.abs(yc).max(axis=1) if yc.shape[1] else 0.0, gv)
        return yc, gv, n

    def _dummy_ok(self, x):
        if not self.dummy:
            return np.ones(x.shape[0], dtype=bool)
        d = x[:, list(self.dummy)] - np.asarray(self.dummy_center)
        return (np.abs(d) < self.dummy_half).all(axis=1)

    def support(self, x) -> np.ndarray:
        """Points where the block may differ from the identity."""
        _, _, n = self._gauge(x)
        return (n < self.r_out) & self._dummy_ok(x) & (x[:, self.vertical] < 1 + self.eps)

    def inner(self, x) -> np.ndarray:
        _, _, n = self._gauge(x)
        return (n < self.r_in) & self._dummy_ok(x) & (x[:, self.vertical] < 1 + self.eps)

    def region(self, x) -> np.ndarray:
        _, _, n = self._gauge(x)
        return (n < self.width) & self._dummy_ok(x)

    def _scale(self, x, factor, yc, gv):
        out = x.copy()
        out[:, list(self.cross)] = np.asarray(self.center) + yc * factor[:, None]
        out[:, self.vertical] = 1 + self.eps - self.g_inv(gv * factor)
        return out

    def forward(self, x):
        yc, gv, n = self._gauge(x)
        return self._scale(x, self.profile(n) / n, yc, gv)

    def inverse(self, y):
        yc, gv, n = self._gauge(y)
        return self._scale(y, self.profile.inverse(n) / n, yc, gv)

    def describe(self) -> dict:
        return {"kind": "radial_push", "tag": self.tag, "vertical": self.vertical, "cross": list(self.cross),
                "center": list(self.center), "r_in": self.r_in, "r_out": self.r_out, "width": self.width,
                "eps": self.eps, "bottom": self.bottom, "dummy": list(self.dummy),
                "dummy_center": list(self.dummy_center),
                "dummy_half": None if math.isinf(self.dummy_half) else self.dummy_half}


@dataclass
class Stage:
    """Blocks with pairwise disjoint supports, applied simultaneously."""

    blocks: list
    name: str = ""

    def check_disjoint(self, samples: int = 20000, rng=None):
        rng = rng or np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(samples, len(self._dims())))
        hits = np.zeros(samples, dtype=int)
        for b in self.blocks:
            hits += b.support(x)
        if (hits > 1).any():
            raise ConstructionError(f"stage {self.name}: block supports overlap at {x[np.argmax(hits)].tolist()}")

    def _dims(self):
        b = self.blocks[0]
        return range(1 + max([b.vertical, *b.cross, *b.dummy]))

    def apply(self, x):
        out = x.copy()
        for b in self.blocks:
            mask = b.support(x)
            if mask.any():
                out[mask] = b.forward(x[mask])
        return out

    def inverse(self, y):
        out = y.copy()
        live = np.isfinite(y).all(axis=1)
        for b in self.blocks:
            mask = live.copy()
            mask[live] = b.support(y[live])
            if not mask.any():
                continue
            inner = np.zeros_like(mask)
            inner[mask] = b.inner(y[mask])
            out[inner] = np.nan
            ok = mask & ~inner
            if ok.any():
                out[ok] = b.inverse(y[ok])
        return out


@dataclass
class DiffeoPipeline:
    """Composition of stages; stages[0] is applied first."""

    m: int
    stages: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    passes: list = field(default_factory=list)

    @property
    def is_identity(self) -> bool:
        return not any(s.blocks for s in self.stages)

    def apply(self, x):
        x, single = _rows(x)
        out = x.copy()
        for s in self.stages:
            out = s.apply(out)
        return out[0] if single else out

    __call__ = apply

    def inverse(self, y):
        """Preimage, nan rows for points outside the image."""
        y, single = _rows(y)
        out = y.copy()
        for s in reversed(self.stages):
            out = s.inverse(out)
        return out[0] if single else out

    def in_image(self, y) -> np.ndarray:
        y, _ = _rows(y)
        return np.isfinite(self.inverse(y)).all(axis=1)

    def jacobian(self, x, h: float = 1e-6) -> np.ndarray:
        x, single = _rows(x)
        cols = []
        for k in range(self.m):
            e = np.zeros(self.m)
            e[k] = h
            cols.append((self.apply(x + e) - self.apply(x - e)) / (2 * h))
        jac = np.stack(cols, axis=-1)
        return jac[0] if single else jac

    def det(self, x, h: float = 1e-6) -> np.ndarray:
        return np.linalg.det(self.jacobian(x, h))

    def support(self, x) -> np.ndarray:
        x, _ = _rows(x)
        hit = np.zeros(x.shape[0], dtype=bool)
        for s in self.stages:
            for b in s.blocks:
                hit |= b.region(x)
        return hit

    def truncated(self, count: int) -> "DiffeoPipeline":
        """The pipeline made of the first `count` passes (in construction order)."""
        keep = [s for s in self.stages if s.name.split(":")[0] in self.passes[:count]]
        return DiffeoPipeline(self.m, keep, dict(self.params), self.passes[:count])

    def lipschitz_constant(self, samples: int = 4000, rng=None) -> float:
        """Largest operator norm of DPhi over uniform samples in Q^m."""
        rng = rng or np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(samples, self.m))
        x = x[(np.abs(x) < 1 - 1e-5).all(axis=1)]
        return float(np.linalg.norm(self.jacobian(x), ord=2, axis=(1, 2)).max())

    def describe(self) -> dict:
        return {"m": self.m, "params": self.params, "passes": self.passes,
                "stages": [{"name": s.name, "blocks": [b.describe() for b in s.blocks]} for s in self.stages]}

    def pullback(self, target):
        return pullback_singular_set(self, target)


def identity_pipeline(m: int) -> DiffeoPipeline:
    return DiffeoPipeline(m, [], {"kind": "identity"}, [])


# wells and block layout ------------------------------------------------------------

def rho_ladder(mu: float, levels: int) -> list[tuple[float, float]]:
    """(rho_under_d, rho_over_d) for d = 0..levels-1, equispaced in (mu/2, mu).

    Order: rho_under_{top} < rho_over_{top} < ... < rho_under_0 < rho_over_0.
    """
    vals = [mu / 2 + k * mu / (2 * (2 * levels + 1)) for k in range(1, 2 * levels + 1)]
    pairs = [(vals[2 * i], vals[2 * i + 1]) for i in range(levels)]
    return list(reversed(pairs))


@dataclass(frozen=True)
class Well:
    """Sup-norm neighbourhood of the truncated vertical part of a dual skeleton."""

    pieces: tuple
    vertical: int
    width: float
    eta: float

    def contains(self, x) -> np.ndarray:
        x, _ = _rows(x)
        out = np.zeros(x.shape[0], dtype=bool)
        bottom = -1 + self.eta
        for f in self.pieces:
            c, h = f.as_float()
            lo, hi = c - h, c + h
            lo = np.maximum(lo, -1)
            hi = np.minimum(hi, 1)
            lo[self.vertical] = max(lo[self.vertical], bottom)
            out |= ((x > lo - self.width) & (x < hi + self.width)).all(axis=1)
        return out & (np.abs(x) <= 1).all(axis=1)


def vertical_pieces(faces, axes) -> list[Face]:
    """Pieces whose span contains every axis in `axes`."""
    return [f for f in faces if all(a in f.axes for a in axes)]


def _check_mu(mu):
    if not 0 < mu < 0.5:
        raise DomainError(f"mu must satisfy 0 < mu < 1/2, got {mu}")


def _first_pass(c: Cubication, ell_star: int, mu: float, vertical: int = None) -> list[Stage]:
    """Columns around top-face vertices, then slabs around top-face edges (ell* = 2)."""
    m = c.m
    vertical = m - 1 if vertical is None else vertical
    eta = float(c.eta)
    eps = mu * eta / 2
    bottom = -1 + eta
    horiz = [a for a in range(m) if a != vertical]
    centres = [float(v) for v in c.centers_1d()]
    ladder = rho_ladder(mu, ell_star)
    lo0, hi0 = ladder[0]
    cols = []
    for pt in itertools.product(centres, repeat=len(horiz)):
        cols.append(PushBlock(vertical, tuple(horiz), tuple(pt), lo0 * eta, hi0 * eta, mu * eta, eps, bottom,
                              tag=f"column{list(pt)}"))
    stages = [Stage(cols, "vertical:columns")]
    if ell_star == 2:
        lo1, hi1 = ladder[1]
        marks = [-1 - eta] + centres + [1 + eta]
        slabs = []
        for along in horiz:
            rest = [a for a in horiz if a != along]
            for pos in itertools.product(centres, repeat=len(rest)):
                for a, b in zip(marks[:-1], marks[1:]):
                    slabs.append(PushBlock(vertical, tuple(rest), tuple(pos), lo1 * eta, hi1 * eta, mu * eta,
                                           eps, bottom, dummy=(along,), dummy_center=((a + b) / 2,),
                                           dummy_half=(b - a) / 2 - hi1 * eta, tag=f"slab{along}{list(pos)}@{a:+.3f}"))
        stages.append(Stage(slabs, "vertical:slabs"))
    elif ell_star > 2:
        raise UnsupportedError(f"ell*={ell_star} wells are not assembled")
    return stages


def build_phi_top_lines(c: Cubication, mu: float) -> DiffeoPipeline:
    """Uncrossing pipeline for the line dual skeleton of a cubication of Q^3."""
    if c.m != 3:
        raise UnsupportedError("line uncrossing is built for m = 3")
    _check_mu(mu)
    stages = _first_pass(c, 1, mu)
    return DiffeoPipeline(3, stages, {"kind": "top_lines", "m": 3, "ell": 1, "eta": str(c.eta), "mu": mu},
                          ["vertical"])


def second_pass_width(first: list[Stage]) -> float:
    """Clearance of the first-pass preimages of horizontal pieces from the vertical planes.

    Inside a slab, those preimages keep |x' - c'| >= g(eps), the distorted
    depth of the top face; the second well takes half of it.
    """
    vals = [float(b.g(np.array(b.eps))) for s in first for b in s.blocks if b.dummy]
    return min(vals) / 2


def build_phi_general(c: Cubication, ell: int, mu: float) -> DiffeoPipeline:
    """Crossing-removal pipeline for the (m - ell - 1)-dimensional dual skeleton.

    Supported: m = 3 with ell = 1 (lines) or ell = 0 (planes).
    """
    _check_mu(mu)
    if c.m != 3 or ell not in (0, 1):
        raise UnsupportedError(f"(m={c.m}, ell={ell}) is not supported; only m=3 with ell in {{0, 1}}")
    if ell == 1:
        p = build_phi_top_lines(c, mu)
        p.params["kind"] = "general"
        return p
    eta = float(c.eta)
    first = _first_pass(c, 2, mu)
    w2 = second_pass_width(first)
    rho = w2 / (mu * eta)
    r_in, r_out = 2 * w2 / 3, 5 * w2 / 6
    blocks = [PushBlock(0, (1,), (float(v),), r_in, r_out, w2, w2 / 2, -1 + eta, dummy=(2,), dummy_center=(0.0,),
                        tag=f"plane-slab[x1={float(v):+.3f}]") for v in c.centers_1d()]
    # Phi = Phi_v o Phi_h: the horizontal pass acts first
    stages = [Stage(blocks, "horizontal:slabs")] + first
    return DiffeoPipeline(3, stages, {"kind": "general", "m": 3, "ell": 0, "eta": str(c.eta), "mu": mu,
                                      "rho": rho}, ["vertical", "horizontal"])


# pullback -----------------------------------------------------------------------

@dataclass
class PullbackResult:
    pieces: PieceSet
    polylines: list
    surfaces: list
    crossing_count: int
    crossings_before: int
    surviving: list
    min_separation: float
    embedded: bool

    def report(self) -> dict:
        return {"crossings_before": self.crossings_before, "crossings_after": self.crossing_count,
                "min_separation": self.min_separation, "embedded": self.embedded,
                "flag_near": self.min_separation < 1e-7}


def _as_faces(target):
    if hasattr(target, "pieces") and not isinstance(target, PieceSet):
        return list(target.pieces)
    if isinstance(target, PieceSet):
        return None
    return list(target)


def surviving_crossings(phi: DiffeoPipeline, faces, samples: int = 256) -> list[Crossing]:
    """Crossings of the faces whose preimage under phi is nonempty.

    phi is injective, so the preimages of two pieces meet exactly over the
    preimage of their intersection.
    """
    out = []
    for cr in crossing_points(faces):
        pts = cr.sample(samples)
        if phi.in_image(pts).any():
            out.append(cr)
    return out


def _line_params(phi, a, b, base: int = 400, depth: int = 40):
    """Parameters along the segment a->b, clustered near image-boundary transitions."""
    t = np.linspace(0, 1, base)
    pts = a + t[:, None] * (b - a)
    inside = phi.in_image(pts)
    flips = np.nonzero(inside[1:] != inside[:-1])[0]
    if not flips.size:
        return t
    lo, hi = t[flips], t[flips + 1]
    val_lo = inside[flips]
    for _ in range(depth):
        mid = 0.5 * (lo + hi)
        v = phi.in_image(a + mid[:, None] * (b - a))
        same = v == val_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    edge = np.where(val_lo, lo, hi)
    direction = np.where(val_lo, -1.0, 1.0)
    steps = (t[1] - t[0]) * 2.0 ** -np.arange(1, 36)
    extra = np.concatenate([edge, (edge[:, None] + direction[:, None] * steps[None]).ravel()])
    t = np.unique(np.clip(np.concatenate([t, np.array(extra)]), 0, 1))
    return t


def _pull_line(phi, face: Face):
    c, h = face.as_float()
    ax = face.axes[0]
    a, b = c.copy(), c.copy()
    a[ax], b[ax] = -1.0, 1.0
    t = _line_params(phi, a, b)
    t, pre = _refine(phi, a, b, t, phi.inverse(a + t[:, None] * (b - a)))
    ok = np.isfinite(pre).all(axis=1)
    runs = []
    cur = []
    for p, good in zip(pre, ok):
        if good:
            cur.append(p)
        elif cur:
            runs.append(np.array(cur))
            cur = []
    if cur:
        runs.append(np.array(cur))
    return [piece for r in runs for piece in _clip_to_cube(r)]


def _refine(phi, a, b, t, pre, tol: float = 2e-6, max_len: float = 0.02, rounds: int = 30):
    """Insert parameters until every chord of the preimage polyline is short
    and within `tol` of the curve at its midpoint; distances to the polyline
    are only as good as this."""
    for _ in range(rounds):
        good = np.isfinite(pre).all(axis=1)
        pair = good[:-1] & good[1:]
        tm = 0.5 * (t[:-1] + t[1:])
        cand = np.nonzero(pair & (np.diff(t) > 1e-12))[0]
        if cand.size == 0:
            break
        mid = phi.inverse(a + tm[cand, None] * (b - a))
        chord = 0.5 * (pre[cand] + pre[cand + 1])
        dev = np.linalg.norm(mid - chord, axis=1)
        length = np.linalg.norm(pre[cand + 1] - pre[cand], axis=1)
        split = (dev > tol) | (length > max_len) | ~np.isfinite(dev)
        if not split.any():
            break
        t = np.concatenate([t, tm[cand[split]]])
        pre = np.concatenate([pre, mid[split]])
        order = np.argsort(t, kind="stable")
        t, pre = t[order], pre[order]
    return t, pre


def _clip_to_cube(run: np.ndarray, tol: float = 1e-12) -> list[np.ndarray]:
    """Split a polyline at the boundary of Q, keeping the parts inside."""
    inside = (np.abs(run) <= 1 + tol).all(axis=1)
    out, cur = [], []
    for i in range(len(run)):
        if inside[i]:
            if not cur and i > 0:
                cur.append(_boundary_point(run[i], run[i - 1]))
            cur.append(run[i])
        elif cur:
            cur.append(_boundary_point(run[i - 1], run[i]))
            out.append(np.array(cur))
            cur = []
    if cur:
        out.append(np.array(cur))
    return [r for r in out if len(r) > 1]


def _boundary_point(a, b):
    """Point where the segment from a (inside) to b (outside) leaves Q."""
    d = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(d != 0, (np.sign(d) - a) / d, np.inf)
    return a + min(1.0, float(t[t >= 0].min())) * d


def _pull_plane(phi, face: Face, n: int = 61):
    c, _ = face.as_float()
    ax = face.axes
    s = np.linspace(-1, 1, n)
    g1, g2 = np.meshgrid(s, s, indexing="ij")
    pts = np.tile(c, (n * n, 1))
    pts[:, ax[0]] = g1.ravel()
    pts[:, ax[1]] = g2.ravel()
    pre = phi.inverse(pts).reshape(n, n, -1)
    return pre


def pullback_singular_set(phi: DiffeoPipeline, target) -> PullbackResult:
    """Preimage of a union of affine pieces with a crossing report.

    Lines become polylines (one label per source piece); planes become
    sampled sheets with nan where the plane leaves the image of phi.
    """
    faces = _as_faces(target)
    if faces is None:
        return _pull_pieceset(phi, target)
    if not faces:
        return PullbackResult(PieceSet([], phi.m), [], [], 0, 0, [], math.inf, True)
    dim = faces[0].dimension
    before = len(crossing_points(faces))
    if phi.is_identity:
        surv = crossing_points(faces)
    else:
        surv = surviving_crossings(phi, faces)
    polylines, surfaces = [], []
    if dim == 1:
        for i, f in enumerate(faces):
            for run in _pull_line(phi, f):
                polylines.append((i, run))
        lines = [r for _, r in polylines]
        labels = [i for i, _ in polylines]
        pieces = PieceSet.from_polylines(lines, labels) if lines else PieceSet([], phi.m)
        sep = _min_separation(polylines)
        embedded = all(_injective(r) for r in lines)
    elif dim == 0:
        pre = phi.inverse(np.array([f.as_float()[0] for f in faces]))
        keep = np.isfinite(pre).all(axis=1)
        pieces = PieceSet([AffinePiece.point(p, i) for i, p in enumerate(pre) if keep[i]], phi.m)
        sep, embedded = math.inf, True
    else:
        for i, f in enumerate(faces):
            surfaces.append((i, _pull_plane(phi, f)))
        # sheets are carried as dense point sets for distance queries
        pts, labs = [], []
        for i, s in surfaces:
            flat = s.reshape(-1, phi.m)
            flat = flat[np.isfinite(flat).all(axis=1)]
            pts.extend(flat)
            labs.extend([i] * len(flat))
        pieces = PieceSet([AffinePiece.point(p, l) for p, l in zip(pts, labs)], phi.m)
        sep, embedded = math.nan, True
    return PullbackResult(pieces, polylines, surfaces, len(surv), before, surv, sep, embedded)


def _pull_pieceset(phi, ps: PieceSet) -> PullbackResult:
    lines = []
    for q in ps.pieces:
        if q.k != 1:
            raise UnsupportedError("pullback of a general piece set handles segments only")
        a = q.origin - q.half_extents[0] * q.tangents[0]
        b = q.origin + q.half_extents[0] * q.tangents[0]
        t = np.linspace(0, 1, 64)
        pre = phi.inverse(a + t[:, None] * (b - a))
        pre = pre[np.isfinite(pre).all(axis=1)]
        if len(pre) > 1:
            lines.append((q.label, pre))
    pieces = PieceSet.from_polylines([r for _, r in lines], [i for i, _ in lines]) if lines else PieceSet([], phi.m)
    sep = _min_separation(lines)
    return PullbackResult(pieces, lines, [], int(sep < 1e-7), 0, [], sep, True)


def _injective(run: np.ndarray) -> bool:
    if len(run) < 3:
        return True
    steps = np.linalg.norm(np.diff(run, axis=0), axis=1)
    return bool((steps > 0).all())


def _min_separation(polylines) -> float:
    """Smallest distance inside Q between polylines with different labels."""
    best = math.inf
    for (i, a), (j, b) in itertools.combinations(polylines, 2):
        if i == j or len(a) < 2 or len(b) < 2:
            continue
        lo = np.maximum(a.min(axis=0), b.min(axis=0))
        hi = np.minimum(a.max(axis=0), b.max(axis=0))
        if (lo > hi + best).any():
            continue
        best = min(best, polyline_min_distance(a, b))
    return best


# retractions ----------------------------------------------------------------------

def radial_projection_piece(lo, hi, apex, dummy_axes=()):
    """Retraction of the box [lo, hi] from `apex` onto the faces the rays exit through.

    Dummy axes are left alone.  Returns a vectorized map that is the identity
    outside the box.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    apex = np.asarray(apex, dtype=float)
    act = [i for i in range(len(lo)) if i not in set(dummy_axes)]
    a = apex[act]
    if np.all((a >= lo[act]) & (a <= hi[act])):
        raise ConstructionError(f"apex {apex.tolist()} lies in the closed region")

    def project(x):
        x, single = _rows(x)
        out = x.copy()
        inside = ((x >= lo) & (x <= hi)).all(axis=1)
        xs = x[inside][:, act]
        d = xs - a
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.where(d > 0, hi[act], lo[act])
            t = np.where(d != 0, (bound - a) / d, np.inf)
        tex = t.min(axis=1)
        if np.any(~np.isfinite(tex)) or np.any(np.linalg.norm(d, axis=1) == 0):
            raise ConstructionError("ray from the apex is degenerate")
        res = out[inside]
        res[:, act] = a + tex[:, None] * d
        out[inside] = res
        return out[0] if single else out

    return project


@dataclass
class ModelRetraction:
    """Retraction of Q^3 minus five segments onto the edges of Q^3."""

    apex: np.ndarray
    singular: PieceSet
    face_centres: np.ndarray

    def __call__(self, x):
        x, single = _rows(x)
        d = self.singular.distance(x)
        if (d < 1e-12).any():
            from .targets import SingularityError
            raise SingularityError(f"point {x[np.argmax(d < 1e-12)].tolist()} is on the singular set", 0.0)
        h = radial_projection_piece([-1, -1, -1], [1, 1, 1], self.apex)(x)
        out = h.copy()
        for c in self.face_centres:
            ax = int(np.nonzero(c)[0][0])
            on = np.abs(h[:, ax] - c[ax]) < 1e-12
            if not on.any():
                continue
            free = [i for i in range(3) if i != ax]
            y = h[on][:, free]
            n = np.abs(y).max(axis=1)
            res = h[on]
            res[:, free] = y / n[:, None]
            out[on] = res
        return out[0] if single else out


def model_retraction_g(eps: float = 0.25) -> ModelRetraction:
    apex = np.array([0.0, 0.0, 1.0 + eps])
    centres = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, -1]], dtype=float)
    segs = []
    for i, c in enumerate(centres):
        d = apex - c
        # leave Q through the top face x3 = 1
        s = (1 - c[2]) / d[2]
        segs.append(AffinePiece.segment(c, c + s * d, i))
    return ModelRetraction(apex, PieceSet(segs, 3), centres)


def edge_skeleton_points(per_edge: int = 50) -> np.ndarray:
    t = np.linspace(-1, 1, per_edge)
    out = []
    for ax in range(3):
        others = [i for i in range(3) if i != ax]
        for s1, s2 in itertools.product((-1, 1), repeat=2):
            p = np.zeros((per_edge, 3))
            p[:, ax] = t
            p[:, others[0]] = s1
            p[:, others[1]] = s2
            out.append(p)
    return np.concatenate(out)


def singular_components(ps: PieceSet, link: float = 1e-9) -> int:
    return ps.components(link)


def random_pipeline(c: Cubication, rng: np.random.Generator, ell: int = 1) -> DiffeoPipeline:
    mu = float(rng.uniform(0.05, 0.45))
    return build_phi_general(c, ell, mu)
