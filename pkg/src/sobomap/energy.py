"""L^p, integer-order and fractional energies of maps with singular sets.

Two estimators are available.  The Monte-Carlo one samples from a
mixture of a uniform density and tube densities around every singular
piece, with radial profile r^(c-1-b) where c is the codimension and b the
blow-up rate of the integrand.  That makes integrand/density bounded near
the set.  The grid one is an adaptive tree of tensor Gauss cells refined
towards the singular set and the domain boundary, extrapolated over three
depth limits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import MapField, fd_jacobian, frobenius
from .geometry import PieceSet, _padded, sphere_area
from .runtime import as_rng, map_chunks

CSV_FIELDS = ("experiment_id", "quantity", "s", "p", "sigma", "value", "stderr", "samples", "seed")
NEAR_SET = 1e-9


class NonFiniteSample(ArithmeticError):
    def __init__(self, point):
        super().__init__(f"non-finite integrand at {np.asarray(point).tolist()}")
        self.point = point


# domains ------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    @property
    def m(self) -> int:
        return len(self.lo)

    @property
    def bbox(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    @property
    def volume(self) -> float:
        lo, hi = self.bbox
        return float(np.prod(hi - lo))

    @property
    def diameter(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def contains(self, x) -> np.ndarray:
        lo, hi = self.bbox
        return ((x >= lo) & (x <= hi)).all(axis=1)

    def cell_status(self, lo, hi) -> np.ndarray:
        """0 outside, 1 inside, 2 cut by the boundary."""
        blo, bhi = self.bbox
        inside = ((lo >= blo) & (hi <= bhi)).all(axis=1)
        out = ((hi <= blo) | (lo >= bhi)).any(axis=1)
        return np.where(inside, 1, np.where(out, 0, 2))

    def to_dict(self):
        return {"box": [list(self.lo), list(self.hi)]}


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float = 1.0

    @property
    def m(self) -> int:
        return len(self.center)

    @property
    def bbox(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    @property
    def volume(self) -> float:
        m = self.m
        return math.pi ** (m / 2) / math.gamma(m / 2 + 1) * self.radius ** m

    @property
    def diameter(self) -> float:
        return 2 * self.radius

    def contains(self, x) -> np.ndarray:
        return np.linalg.norm(x - np.asarray(self.center), axis=1) <= self.radius

    def cell_status(self, lo, hi) -> np.ndarray:
        c = np.asarray(self.center, float)
        near = np.linalg.norm(np.clip(c, lo, hi) - c, axis=1)
        far = np.linalg.norm(np.maximum(np.abs(lo - c), np.abs(hi - c)), axis=1)
        return np.where(far <= self.radius, 1, np.where(near >= self.radius, 0, 2))

    def to_dict(self):
        return {"ball": [list(self.center), self.radius]}


def cube(m: int, half: float = 1.0) -> Box:
    return Box((-half,) * m, (half,) * m)


def as_domain(dom, m: int):
    if isinstance(dom, (Box, Ball)):
        return dom
    if dom in (None, "cube"):
        return cube(m)
    if dom in ("disk", "ball"):
        return Ball((0.0,) * m, 1.0)
    raise ValueError(f"unknown domain {dom!r}")


# reports ------------------------------------------------------------------

@dataclass
class EnergyReport:
    value: float
    estimator: str
    samples: int
    stderr: float = 0.0
    richardson_delta: float = 0.0
    params: dict = field(default_factory=dict)
    quantity: str = ""
    resampled: int = 0
    diverged: bool = False
    strata: list = field(default_factory=list)
    terms: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        return self.stderr if self.estimator == "monte-carlo" else self.richardson_delta

    def csv_row(self, experiment_id: str, seed) -> dict:
        par = self.params
        return {"experiment_id": experiment_id, "quantity": self.quantity, "s": par.get("s", ""),
                "p": par.get("p", ""), "sigma": par.get("sigma", ""), "value": f"{self.value:.12g}",
                "stderr": f"{self.error:.6g}", "samples": self.samples, "seed": seed}

    def to_dict(self) -> dict:
        return {"value": self.value, "estimator": self.estimator, "samples": self.samples,
                "stderr": self.stderr, "richardson_delta": self.richardson_delta, "params": self.params,
                "quantity": self.quantity, "resampled": self.resampled, "diverged": self.diverged}


def _params(s, p, sigma=None):
    k = int(math.floor(s))
    return {"s": s, "p": p, "sigma": s - k if sigma is None else sigma, "k": k}


# field algebra --------------------------------------------------------------

def field_difference(u: MapField, v: MapField) -> MapField:
    if u.m != v.m or u.nu != v.nu:
        raise ValueError("fields live in different spaces")
    sing = PieceSet(list(u.singular.pieces) + list(v.singular.pieces), u.m)

    def f(x):
        return u.func(x) - v.func(x)

    jac = None
    if u.jac is not None and v.jac is not None:
        def jac(x):
            return u.jac(x) - v.jac(x)

    return MapField(u.m, u.nu, f, sing, None, jac, {"constructor": "difference", "u": u.descriptor,
                                                   "v": v.descriptor})


def derivative_field(u: MapField, j: int) -> MapField:
    """D^j u flattened to a vector field, for fractional energies of derivatives."""
    if j == 0:
        return u
    size = u.nu * u.m ** j

    def f(x):
        return u.derivative(x, j).reshape(x.shape[0], size)

    return MapField(u.m, size, f, u.singular, None, None, {"constructor": "derivative", "j": j,
                                                          "field": u.descriptor})


def _integrand(u: MapField, j: int, p: float):
    if j == 0:
        return lambda x: (np.abs(u.func(x)) ** 2).sum(axis=1) ** (p / 2)
    if j == 1:
        def g(x):
            d = u.singular.distance(x)
            jac = u.jac(x) if u.jac is not None else fd_jacobian(u.func, x, d)
            return frobenius(jac) ** p
        return g
    if j == 2:
        return lambda x: frobenius(u.derivative(x, 2)) ** p
    raise ValueError("j must be 0, 1 or 2")


# Monte-Carlo proposal --------------------------------------------------------

class TubeProposal:
    """Mixture of uniform-on-bbox and tube densities around affine pieces.

    A tube sample is foot + r*n with foot uniform on the piece, n uniform on
    the unit sphere of the normal space and r on (0, radius] with density
    proportional to r^a.  Only top-dimensional pieces get tubes.
    """

    def __init__(self, domain, pieces: PieceSet, blowup: float, radius: float = 0.5,
                 uniform_weight: float = 0.3):
        self.domain = domain
        lo, hi = domain.bbox
        self.lo, self.hi = lo, hi
        self.bvol = float(np.prod(hi - lo))
        # tubes wider than the domain waste samples
        self.radius = min(radius, float((hi - lo).min()) / 2)
        top = [q for q in pieces.pieces if q.k == pieces.dimension()] if not pieces.empty else []
        if top:
            # pieces whose tube misses the box only cost time
            O, T, H = _padded(top)
            ext = np.einsum("nk,nkm->nm", H, np.abs(T))
            near = ((O + ext >= lo - self.radius) & (O - ext <= hi + self.radius)).all(axis=1)
            top = [q for q, k in zip(top, near) if k]
        self.top = top
        if len(top) > 64:
            # density cost grows with the number of pieces inside a tube
            self.radius = min(self.radius, 0.1)
        if top:
            self.c = pieces.m - top[0].k
            # keep the radial density integrable: a > -1
            self.a = max(self.c - 1 - blowup, -0.9)
            vols = np.array([q.volume for q in top])
            self.w0 = uniform_weight
            self.wp = (1 - uniform_weight) * vols / vols.sum()
            self.O, self.T, self.H = _padded(top)
            self.kdim = top[0].k
            if self.kdim:
                # rows k.. of V^T span the normal space of each piece
                full = np.linalg.svd(self.T[:, : self.kdim], full_matrices=True)[2]
                self.normals = full[:, self.kdim:, :]
            else:
                self.normals = np.broadcast_to(np.eye(pieces.m), (len(top), pieces.m, pieces.m))
        else:
            self.w0 = 1.0
            self.wp = np.zeros(0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        m = len(self.lo)
        comp = rng.choice(len(self.wp) + 1, size=n, p=np.concatenate([[self.w0], self.wp]))
        out = np.empty((n, m))
        uni = comp == 0
        out[uni] = rng.uniform(self.lo, self.hi, size=(int(uni.sum()), m))
        rows = np.nonzero(~uni)[0]
        if rows.size:
            ids = comp[rows] - 1
            t = rng.uniform(-1, 1, size=(rows.size, self.kdim)) * self.H[ids, : self.kdim]
            foot = self.O[ids] + np.einsum("nk,nkm->nm", t, self.T[ids, : self.kdim])
            # stratified inverse cdf in the radial variable
            u = (rng.permutation(rows.size) + rng.uniform(size=rows.size)) / rows.size
            r = self.radius * u ** (1.0 / (self.a + 1))
            g = rng.normal(size=(rows.size, self.c))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            out[rows] = foot + r[:, None] * np.einsum("nc,ncm->nm", g, self.normals[ids])
        return out

    def density(self, x: np.ndarray) -> np.ndarray:
        inbox = ((x >= self.lo) & (x <= self.hi)).all(axis=1)
        q = self.w0 * inbox / self.bvol
        if not self.top:
            return q
        if len(self.top) > 64:
            return q + self._tube_sparse(x)
        for s in range(0, len(self.top), 256):
            ids = np.arange(s, min(s + 256, len(self.top)))
            rows = np.repeat(np.arange(len(x)), len(ids))
            cols = np.tile(ids, len(x))
            q = q + np.bincount(rows, self._tube_pairs(x[rows], cols), minlength=len(x))
        return q

    def _tube_pairs(self, x, ids):
        """Weighted tube density of piece ids[i] at x[i]."""
        O, T, H = self.O[ids], self.T[ids], self.H[ids]
        vol = np.prod(2 * H[:, : self.kdim], axis=1) if self.kdim else np.ones(len(ids))
        d = x - O
        t = np.einsum("nm,nkm->nk", d, T)
        foot_in = (np.abs(t) <= H).all(axis=1)
        r = np.linalg.norm(d - np.einsum("nk,nkm->nm", t, T), axis=1)
        ok = foot_in & (r <= self.radius) & (r > 0)
        rr = np.where(ok, r, 1.0)
        norm = (self.a + 1) / self.radius ** (self.a + 1) / sphere_area(self.c)
        return np.where(ok, norm * rr ** (self.a - self.c + 1) / vol, 0.0) * self.wp[ids]

    def _tube_sparse(self, x):
        from scipy.spatial import cKDTree

        if not hasattr(self, "_kd"):
            radii = np.sqrt((self.H ** 2).sum(axis=1))
            long = radii > max(16 * float(np.median(radii)), 1e-3)
            self._long = np.nonzero(long)[0]
            self._short = np.nonzero(~long)[0]
            self._kd = cKDTree(self.O[self._short])
            self._reach = float(radii[self._short].max())
        out = np.zeros(len(x))
        for i in self._long:
            out += self._tube_pairs(x, np.full(len(x), i))
        for s in range(0, len(x), 2048):
            xs = x[s:s + 2048]
            lists = self._kd.query_ball_point(xs, self.radius + self._reach)
            counts = np.fromiter((len(l) for l in lists), dtype=int, count=len(lists))
            if counts.sum() == 0:
                continue
            rows = np.repeat(np.arange(len(xs)), counts)
            cols = self._short[np.fromiter((j for l in lists for j in l), dtype=int, count=int(counts.sum()))]
            # bounded pair batches keep memory flat
            for b in range(0, len(rows), 1 << 20):
                r, c = rows[b:b + (1 << 20)], cols[b:b + (1 << 20)]
                out[s:s + 2048] += np.bincount(r, self._tube_pairs(xs[r], c), minlength=len(xs))
        return out


def _draw(prop: TubeProposal, sing: PieceSet, n: int, rng):
    x = prop.sample(n, rng)
    redo = 0
    if not sing.empty:
        for _ in range(50):
            bad = sing.distance(x) < NEAR_SET
            if not bad.any():
                break
            redo += int(bad.sum())
            x[bad] = prop.sample(int(bad.sum()), rng)
    return x, redo


def _mc(integrand, domain, sing: PieceSet, blowup: float, samples: int, rng, radius=0.5, mask=None):
    prop = TubeProposal(domain, sing, blowup, radius=radius)

    def chunk(n, g):
        x, redo = _draw(prop, sing, n, g)
        inside = domain.contains(x)
        if mask is not None:
            inside &= mask(x)
        val = np.zeros(n)
        if inside.any():
            f = integrand(x[inside])
            bad = ~np.isfinite(f)
            if bad.any():
                raise NonFiniteSample(x[inside][np.argmax(bad)])
            val[inside] = f / prop.density(x[inside])
        return val, redo

    parts = map_chunks(chunk, samples, as_rng(rng))
    vals = np.concatenate([v for v, _ in parts])
    redo = sum(r for _, r in parts)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))), redo


# adaptive grid -----------------------------------------------------------------

def _gauss(order: int, m: int):
    x, w = np.polynomial.legendre.leggauss(order)
    grids = np.meshgrid(*([x] * m), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wg = np.meshgrid(*([w] * m), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1) / 2 ** m
    return nodes, weights


def _cell_integrals(F, lows, h, nodes, weights, domain=None, chunk=4096):
    out = np.empty(len(lows))
    vol = float(np.prod(h))
    for s in range(0, len(lows), chunk):
        c = lows[s:s + chunk] + h / 2
        pts = (c[:, None, :] + nodes[None] * (h / 2)).reshape(-1, len(h))
        vals = F(pts)
        if domain is not None:
            vals = np.where(domain.contains(pts), vals, 0.0)
        out[s:s + chunk] = (vals.reshape(len(c), -1) * weights).sum(axis=1) * vol
    return out


def _tree(F, domain, sing: PieceSet, order: int, depth: int, theta: float = 1.0, base: int = 2,
          cut_points: int | None = None):
    """Integrals with refinement capped at depth, depth+1 and depth+2, plus cell count."""
    lo, hi = domain.bbox
    m = len(lo)
    nodes, weights = _gauss(order, m)
    cp = cut_points or (16 if m <= 2 else 6)
    mid = (np.arange(cp) + 0.5) / cp * 2 - 1
    fine_nodes = np.stack([g.ravel() for g in np.meshgrid(*([mid] * m), indexing="ij")], axis=1)
    fine_w = np.full(len(fine_nodes), 1.0 / len(fine_nodes))
    h = (hi - lo) / 2 ** base
    idx = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(2 ** base)] * m), indexing="ij")], axis=1)
    lows = lo + idx * h
    limits = [depth, depth + 1, depth + 2]
    totals = [0.0, 0.0, 0.0]
    cells = 0
    kids = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(2)] * m), indexing="ij")], axis=1)
    level = base
    while len(lows):
        status = domain.cell_status(lows, lows + h)
        lows, status = lows[status > 0], status[status > 0]
        cells += len(lows)
        diag = float(np.linalg.norm(h))
        d = sing.distance(lows + h / 2) if not sing.empty else np.full(len(lows), np.inf)
        want = (diag > theta * d) | (status == 2)
        leaf = _cell_integrals(F, lows[~want], h, nodes, weights).sum() if (~want).any() else 0.0
        for t, lim in enumerate(limits):
            if level <= lim:
                totals[t] += leaf
        stop = [t for t, lim in enumerate(limits) if lim == level]
        if stop and want.any():
            w_lows, w_stat = lows[want], status[want]
            val = 0.0
            if (w_stat == 1).any():
                val += _cell_integrals(F, w_lows[w_stat == 1], h, nodes, weights).sum()
            if (w_stat == 2).any():
                val += _cell_integrals(F, w_lows[w_stat == 2], h, fine_nodes, fine_w, domain).sum()
            for t in stop:
                totals[t] += val
        if level == limits[-1]:
            break
        parents = lows[want]
        h = h / 2
        lows = (parents[:, None, :] + kids[None] * h).reshape(-1, m)
        level += 1
    return totals, cells


def _richardson(v, rate):
    f = 2.0 ** rate
    r1 = (f * v[1] - v[0]) / (f - 1)
    r2 = (f * v[2] - v[1]) / (f - 1)
    return r2, abs(r2 - r1)


def _grid(F, domain, sing, rate, order, depth):
    totals, cells = _tree(F, domain, sing, order, depth)
    value, delta = _richardson(totals, rate)
    return value, delta, cells


def _default_depth(m):
    return {1: 14, 2: 9, 3: 6}.get(m, 4)


# public estimators ---------------------------------------------------------------

def lp_norm_p(u: MapField, p: float, domain="cube", estimator: str = "tensor-grid",
              samples: int = 100_000, rng=None, depth: int | None = None) -> EnergyReport:
    """Integral of |u|^p (Euclidean norm of the value)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    dom = as_domain(domain, u.m)
    F = _integrand(u, 0, p)
    par = _params(0, p, 0.0)
    if estimator == "monte-carlo":
        v, se, redo = _mc(F, dom, PieceSet([], u.m), 0.0, samples, rng)
        return EnergyReport(max(v, 0.0), "monte-carlo", samples, se, params=par, quantity="lp", resampled=redo)
    # bounded integrand: the error sits in cells touching the singular set,
    # whose volume shrinks like h^codim
    rate = 2.0 if u.singular.empty else float(u.singular.codimension())
    v, delta, cells = _grid(F, dom, u.singular, rate, 4, depth or _default_depth(u.m))
    return EnergyReport(max(v, 0.0), "tensor-grid", cells, richardson_delta=delta, params=par, quantity="lp")


def grad_energy(u: MapField, j: int, p: float, domain="cube", estimator: str = "monte-carlo",
                samples: int = 100_000, rng=None, depth: int | None = None,
                tube_radius: float = 0.5, mask=None) -> EnergyReport:
    """Integral of |D^j u|^p with the Frobenius norm of the j-th differential.

    `mask`, a boolean function of the points, restricts the domain further
    (Monte Carlo only).
    """
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    dom = as_domain(domain, u.m)
    F = _integrand(u, j, p)
    par = _params(j, p, 0.0)
    blowup = j * p
    if estimator == "monte-carlo":
        v, se, redo = _mc(F, dom, u.singular, blowup, samples, rng, radius=tube_radius, mask=mask)
        return EnergyReport(max(v, 0.0), "monte-carlo", samples, se, params=par,
                            quantity=f"grad{j}", resampled=redo)
    if estimator != "tensor-grid":
        raise ValueError(f"unknown estimator {estimator!r}")
    if mask is not None:
        raise ValueError("masks are only supported by the Monte-Carlo estimator")
    if u.singular.empty:
        rate = 2.0
    else:
        rate = u.singular.codimension() - blowup
        if rate <= 0:
            raise ValueError(f"|D^{j}u|^p is not integrable near a codimension-{u.singular.codimension()} set")
    v, delta, cells = _grid(F, dom, u.singular, rate, 4, depth or _default_depth(u.m))
    return EnergyReport(max(v, 0.0), "tensor-grid", cells, richardson_delta=delta, params=par,
                        quantity=f"grad{j}")


def _radial_steps(n, m, diam, delta, rng):
    u = (rng.permutation(n) + rng.uniform(size=n)) / n
    rho = diam * u ** (1.0 / delta)
    g = rng.normal(size=(n, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return rho, g


def _delta(sigma, p):
    return min(1.0, p * (1 - sigma)) / 2


def _strata(rho, w, diam, min_count: int = 30):
    """Contribution of each dyadic stratum diam*2^-(k+1) < rho <= diam*2^-k to the mean.

    Strata with fewer than `min_count` samples are reported as nan.
    """
    k = np.floor(np.log2(diam / np.maximum(rho, 1e-300))).astype(int)
    top = int(min(k.max(initial=0), 60))
    out = []
    for i in range(top + 1):
        sel = k == i
        out.append(float(w[sel].sum() / len(w)) if sel.sum() >= min_count else float("nan"))
    return out


def diverging(strata: list, factor: float = 4.0) -> bool:
    """Contributions of the four finest resolved strata increasing, by more than `factor` overall.

    A convergent double integral has contributions decaying as rho -> 0.
    Features of size r make coarser strata grow down to rho ~ r, so only
    the finest window decides.
    """
    c = [v for v in strata if math.isfinite(v)]
    if len(c) < 4:
        return False
    w = c[-4:]
    return w[0] > 0 and w[0] < w[1] < w[2] < w[3] and w[3] > factor * w[0]


def gagliardo_seminorm_p(u: MapField, sigma: float, p: float, domain="cube", samples: int = 100_000,
                         rng=None, k: int = 0) -> EnergyReport:
    """Double integral of |f(x)-f(y)|^p / |x-y|^(m + sigma p) for f = D^k u.

    y = x + rho*w with rho ~ rho^(delta-1) on (0, diam]; the proposal for x
    follows the singular set of u.
    """
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be >= 1")
    f = derivative_field(u, k)
    dom = as_domain(domain, u.m)
    m = u.m
    diam = dom.diameter
    delta = _delta(sigma, p)
    prop = TubeProposal(dom, u.singular, (k + sigma) * p)
    scale = diam ** delta / delta * sphere_area(m)

    def chunk(n, g):
        x, redo = _draw(prop, u.singular, n, g)
        rho, w = _radial_steps(n, m, diam, delta, g)
        y = x + rho[:, None] * w
        ok = dom.contains(x) & dom.contains(y)
        val = np.zeros(n)
        if ok.any():
            diff = (np.abs(f.func(x[ok]) - f.func(y[ok])) ** 2).sum(axis=1) ** (p / 2)
            wt = diff * rho[ok] ** (-sigma * p - delta) * scale / prop.density(x[ok])
            bad = ~np.isfinite(wt)
            if bad.any():
                raise NonFiniteSample(x[ok][np.argmax(bad)])
            val[ok] = wt
        return val, rho, redo

    parts = map_chunks(chunk, samples, as_rng(rng))
    vals = np.concatenate([a for a, _, _ in parts])
    rho = np.concatenate([b for _, b, _ in parts])
    strata = _strata(rho, vals, diam)
    div = diverging(strata)
    value = math.inf if div else float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    return EnergyReport(value, "monte-carlo", samples, se, params=_params(k + sigma, p, sigma),
                        quantity=f"gagliardo{k}", resampled=sum(c for _, _, c in parts),
                        diverged=div, strata=strata)


def fractional_derivative_at(u: MapField, sigma: float, p: float, x, domain="cube",
                             samples: int = 50_000, rng=None) -> float:
    """(integral over y of |u(x)-u(y)|^p / |x-y|^(m + sigma p))^(1/p) at one point x."""
    dom = as_domain(domain, u.m)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    m = u.m
    diam = dom.diameter
    delta = _delta(sigma, p)
    ux = u.func(x)[0]

    def chunk(n, g):
        rho, w = _radial_steps(n, m, diam, delta, g)
        y = x + rho[:, None] * w
        ok = dom.contains(y)
        val = np.zeros(n)
        if ok.any():
            diff = (np.abs(u.func(y[ok]) - ux) ** 2).sum(axis=1) ** (p / 2)
            val[ok] = diff * rho[ok] ** (-sigma * p - delta)
        return val

    vals = np.concatenate(map_chunks(chunk, samples, as_rng(rng)))
    return float((vals.mean() * diam ** delta / delta * sphere_area(m)) ** (1 / p))


def wsp_norm_p(w: MapField, s: float, p: float, domain="cube", samples: int = 100_000,
               rng=None, estimator: str = "monte-carlo") -> EnergyReport:
    """p-th power of the W^{s,p} norm: L^p term, gradient terms up to floor(s),
    and the Gagliardo term of the top derivative when s is fractional."""
    rng = as_rng(rng)
    k = int(math.floor(s))
    sigma = s - k
    terms = {"lp": lp_norm_p(w, p, domain, estimator="monte-carlo", samples=samples, rng=rng)}
    for j in range(1, k + 1):
        terms[f"grad{j}"] = grad_energy(w, j, p, domain, estimator=estimator, samples=samples, rng=rng)
    if sigma > 0:
        terms[f"gagliardo{k}"] = gagliardo_seminorm_p(w, sigma, p, domain, samples=samples, rng=rng, k=k)
    diverged = any(t.diverged for t in terms.values())
    total = sum(t.value for t in terms.values())
    err = math.sqrt(sum(t.error ** 2 for t in terms.values()))
    if diverged or not math.isfinite(total):
        total, err = math.inf, math.inf
    return EnergyReport(total, "monte-carlo", samples * len(terms), err, params=_params(s, p, sigma),
                        quantity="wsp_norm_p", diverged=diverged,
                        terms={name: t.value for name, t in terms.items()})


def wsp_distance(u: MapField, v: MapField, s: float, p: float, domain="cube", samples: int = 100_000,
                 rng=None, estimator: str = "monte-carlo") -> EnergyReport:
    """W^{s,p} distance, the p-th root of wsp_norm_p of the difference."""
    rep = wsp_norm_p(field_difference(u, v), s, p, domain, samples, rng, estimator)
    total, err2 = rep.value, rep.error ** 2
    if rep.diverged or not math.isfinite(total):
        value, se = math.inf, math.inf
    elif total > 0:
        value = total ** (1 / p)
        se = math.sqrt(err2) / (p * total ** ((p - 1) / p))
    else:
        value, se = 0.0, math.sqrt(err2) ** (1 / p)
    return EnergyReport(value, "monte-carlo", rep.samples, se, params=rep.params,
                        quantity="wsp_distance", diverged=rep.diverged, terms=rep.terms)
