"""Float geometry of singular sets: unions of bounded affine pieces.

A piece is origin + sum_i t_i * tangent_i with |t_i| <= half_extent_i.
Points, segments (any direction) and axis boxes all fit this form, and a
polyline is a run of segment pieces sharing a label.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .grid import Face


def sphere_area(c: int) -> float:
    """Surface measure of the unit sphere in R^c (2 for c = 1)."""
    return 2.0 * math.pi ** (c / 2) / math.gamma(c / 2)


@dataclass(frozen=True)
class AffinePiece:
    origin: np.ndarray
    tangents: np.ndarray      # (k, m), orthonormal rows
    half_extents: np.ndarray  # (k,)
    label: int = 0

    @property
    def m(self) -> int:
        return self.origin.shape[0]

    @property
    def k(self) -> int:
        return self.tangents.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(2 * self.half_extents)) if self.k else 1.0

    def normal_basis(self) -> np.ndarray:
        if self.k == 0:
            return np.eye(self.m)
        q, _ = np.linalg.qr(np.concatenate([self.tangents.T, np.eye(self.m)], axis=1))
        return q[:, self.k:self.m].T

    @classmethod
    def point(cls, p, label: int = 0) -> "AffinePiece":
        p = np.asarray(p, dtype=float)
        return cls(p, np.zeros((0, p.shape[0])), np.zeros(0), label)

    @classmethod
    def segment(cls, a, b, label: int = 0) -> "AffinePiece":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = b - a
        n = float(np.linalg.norm(d))
        if n == 0:
            return cls.point(a, label)
        return cls((a + b) / 2, (d / n)[None, :], np.array([n / 2]), label)

    @classmethod
    def from_face(cls, f: Face, label: int = 0) -> "AffinePiece":
        c, _ = f.as_float()
        m = c.shape[0]
        tang = np.eye(m)[list(f.axes)]
        return cls(c, tang, np.full(len(f.axes), float(f.halfwidth)), label)


def _padded(pieces: list[AffinePiece]):
    kmax = max(p.k for p in pieces)
    m = pieces[0].m
    O = np.stack([p.origin for p in pieces])
    T = np.zeros((len(pieces), max(kmax, 1), m))
    H = np.zeros((len(pieces), max(kmax, 1)))
    for i, p in enumerate(pieces):
        T[i, :p.k] = p.tangents
        H[i, :p.k] = p.half_extents
    return O, T, H


def _distance_rows(x: np.ndarray, O, T, H) -> np.ndarray:
    """Distance from x[i] to piece i (paired rows)."""
    r = x - O
    t = np.einsum("nm,nkm->nk", r, T)
    perp2 = np.maximum((r * r).sum(axis=1) - (t * t).sum(axis=1), 0.0)
    over = np.maximum(np.abs(t) - H, 0.0)
    return np.sqrt(perp2 + (over * over).sum(axis=1))


def _distance_all(x: np.ndarray, O, T, H) -> np.ndarray:
    best = np.full(x.shape[0], np.inf)
    block = max(1, 2_000_000 // max(1, x.shape[0] * x.shape[1] * T.shape[1]))
    for s in range(0, O.shape[0], block):
        r = x[:, None, :] - O[None, s:s + block]
        t = np.einsum("npm,pkm->npk", r, T[s:s + block])
        perp2 = np.maximum((r * r).sum(axis=2) - (t * t).sum(axis=2), 0.0)
        over = np.maximum(np.abs(t) - H[None, s:s + block], 0.0)
        d = np.sqrt(perp2 + (over * over).sum(axis=2))
        best = np.minimum(best, d.min(axis=1))
    return best


@dataclass
class PieceSet:
    """Finite union of affine pieces, with piece labels grouping polylines."""

    pieces: list[AffinePiece] = field(default_factory=list)
    m: int = 0
    _tree: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.pieces and not self.m:
            self.m = self.pieces[0].m

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def empty(self) -> bool:
        return not self.pieces

    @property
    def labels(self) -> list[int]:
        return sorted({p.label for p in self.pieces})

    @classmethod
    def from_faces(cls, faces, m: int | None = None) -> "PieceSet":
        faces = list(faces)
        ps = [AffinePiece.from_face(f, i) for i, f in enumerate(faces)]
        return cls(ps, m or (faces[0].ambient if faces else 0))

    @classmethod
    def from_polylines(cls, lines: list[np.ndarray], labels: list[int] | None = None) -> "PieceSet":
        ps = []
        for i, line in enumerate(lines):
            lab = i if labels is None else labels[i]
            if len(line) == 1:
                ps.append(AffinePiece.point(line[0], lab))
            for a, b in zip(line[:-1], line[1:]):
                ps.append(AffinePiece.segment(a, b, lab))
        m = lines[0].shape[1] if lines else 0
        return cls(ps, m)

    def dimension(self) -> int:
        if not hasattr(self, "_dim"):
            self._dim = max((p.k for p in self.pieces), default=-1)
        return self._dim

    def codimension(self) -> int:
        return self.m - self.dimension()

    def _arrays(self):
        if self._tree is None:
            O, T, H = _padded(self.pieces)
            radii = np.sqrt((H * H).sum(axis=1))
            # a few long pieces would inflate the search radius for all
            long = radii > max(16 * float(np.median(radii)), 1e-3)
            short = np.nonzero(~long)[0]
            tree = cKDTree(O[short]) if short.size > 64 else None
            reach = float(radii[short].max()) if short.size else 0.0
            self._split = (np.nonzero(long)[0], short)
            self._tree = (O, T, H, tree, reach)
        return self._tree

    def distance(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.pieces:
            return np.full(x.shape[0], np.inf)
        O, T, H, tree, reach = self._arrays()
        if tree is None:
            return _distance_all(x, O, T, H)
        long, short = self._split
        best = _distance_all(x, O[long], T[long], H[long]) if long.size else np.full(x.shape[0], np.inf)
        Os, Ts, Hs = O[short], T[short], H[short]
        # many short pieces: test the nearest centres, fall back when a
        # farther piece could still be closer
        kq = min(16, short.size)
        d0, idx = tree.query(x, k=kq)
        for col in range(kq):
            ids = idx[:, col]
            best = np.minimum(best, _distance_rows(x, Os[ids], Ts[ids], Hs[ids]))
        far = np.nonzero(best > d0[:, -1] - reach)[0]
        if far.size:
            # every piece that can beat the current bound has its centre
            # within bound + reach
            for f0 in range(0, far.size, 256):
                fr = far[f0:f0 + 256]
                lists = tree.query_ball_point(x[fr], best[fr] + reach)
                counts = np.fromiter((len(l) for l in lists), dtype=int, count=len(lists))
                rows = np.repeat(fr, counts)
                cols = np.fromiter((j for l in lists for j in l), dtype=int, count=int(counts.sum()))
                for s in range(0, len(rows), 1_000_000):
                    r, c = rows[s:s + 1_000_000], cols[s:s + 1_000_000]
                    np.minimum.at(best, r, _distance_rows(x[r], Os[c], Ts[c], Hs[c]))
        return best

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Points on the set, pieces chosen proportionally to their k-volume
        within the top dimension."""
        if not self.pieces:
            return np.zeros((0, self.m))
        O, T, H, _, _ = self._arrays()
        kmax = self.dimension()
        if not hasattr(self, "_weights"):
            ks = np.array([p.k for p in self.pieces])
            vol = np.prod(2 * H[:, :max(kmax, 1)], axis=1) if kmax > 0 else np.ones(len(ks))
            w = np.where(ks == kmax, vol, 0.0)
            self._weights = w / w.sum()
        which = rng.choice(len(self.pieces), size=n, p=self._weights)
        t = rng.uniform(-1, 1, size=(n, T.shape[1])) * H[which]
        return O[which] + np.einsum("nk,nkm->nm", t, T[which])

    def sample_near(self, n: int, r_lo: float, r_hi: float, rng: np.random.Generator) -> np.ndarray:
        """Points offset from the set by a radius in [r_lo, r_hi), random direction."""
        base = self.sample(n, rng)
        d = rng.normal(size=(n, self.m))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = np.exp(rng.uniform(np.log(r_lo), np.log(r_hi), size=n))
        return base + r[:, None] * d

    def components(self, link: float = 1e-9) -> int:
        """Connected components; pieces sharing a label count as connected."""
        if not self.pieces:
            return 0
        labels = self.labels
        groups = {lab: [p for p in self.pieces if p.label == lab] for lab in labels}
        boxes = {}
        for lab, ps in groups.items():
            ends = np.concatenate([_endpoints(p) for p in ps])
            boxes[lab] = (ends.min(axis=0) - link, ends.max(axis=0) + link)
        parent = {lab: lab for lab in labels}

        def root(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, a in enumerate(labels):
            for b in labels[i + 1:]:
                if root(a) == root(b):
                    continue
                (lo_a, hi_a), (lo_b, hi_b) = boxes[a], boxes[b]
                if (np.maximum(lo_a, lo_b) > np.minimum(hi_a, hi_b)).any():
                    continue
                if _group_distance(groups[a], groups[b]) <= link:
                    parent[root(a)] = root(b)
        return len({root(lab) for lab in labels})


def _endpoints(p: "AffinePiece") -> np.ndarray:
    if p.k == 0:
        return p.origin[None]
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=p.k)))
    return p.origin + (corners * p.half_extents) @ p.tangents


def _segment_arrays(ps):
    a0 = np.array([p.origin - (p.tangents[0] * p.half_extents[0] if p.k else 0) for p in ps])
    a1 = np.array([p.origin + (p.tangents[0] * p.half_extents[0] if p.k else 0) for p in ps])
    return a0, a1


def segment_distances(a0, a1, b0, b1) -> np.ndarray:
    """Row-wise exact distance between segments [a0, a1] and [b0, b1]."""
    d1, d2, r = a1 - a0, b1 - b0, a0 - b0
    aa = (d1 * d1).sum(axis=1)
    ee = (d2 * d2).sum(axis=1)
    f = (d2 * r).sum(axis=1)
    c = (d1 * r).sum(axis=1)
    b = (d1 * d2).sum(axis=1)
    tiny = 1e-300
    den = aa * ee - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(den > tiny, np.clip((b * f - c * ee) / den, 0, 1), 0.0)
        s = np.where((ee <= tiny) & (aa > tiny), np.clip(-c / aa, 0, 1), s)
        t = np.where(ee > tiny, (b * s + f) / ee, 0.0)
        s = np.where(t < 0, np.where(aa > tiny, np.clip(-c / aa, 0, 1), 0.0), s)
        s = np.where(t > 1, np.where(aa > tiny, np.clip((b - c) / aa, 0, 1), 0.0), s)
        t = np.clip(t, 0, 1)
        # re-project t for the clamped s
        t = np.where(ee > tiny, np.clip((b * s + f) / ee, 0, 1), 0.0)
    return np.linalg.norm(a0 + d1 * s[:, None] - b0 - d2 * t[:, None], axis=1)


def _group_distance(pa, pb) -> float:
    if any(p.k > 1 for p in pa) or any(p.k > 1 for p in pb):
        return min(piece_distance(a, b) for a in pa for b in pb)
    a0, a1 = _segment_arrays(pa)
    b0, b1 = _segment_arrays(pb)
    best = np.inf
    for s in range(0, len(pa), max(1, 2_000_000 // max(1, len(pb)))):
        n = min(len(pa), s + max(1, 2_000_000 // max(1, len(pb)))) - s
        ia = np.repeat(np.arange(s, s + n), len(pb))
        ib = np.tile(np.arange(len(pb)), n)
        best = min(best, float(segment_distances(a0[ia], a1[ia], b0[ib], b1[ib]).min()))
    return best


def piece_distance(a: AffinePiece, b: AffinePiece) -> float:
    if a.k <= 1 and b.k <= 1:
        ea = [a.origin - (a.tangents[0] * a.half_extents[0] if a.k else 0), a.origin + (a.tangents[0] * a.half_extents[0] if a.k else 0)]
        eb = [b.origin - (b.tangents[0] * b.half_extents[0] if b.k else 0), b.origin + (b.tangents[0] * b.half_extents[0] if b.k else 0)]
        return segment_distance(ea[0], ea[1], eb[0], eb[1])
    # surfaces: distance from a dense sample of one to the other
    small, big = (a, b) if a.k <= b.k else (b, a)
    pts = polyline_points(small, n=65)
    return float(PieceSet([big]).distance(pts).min())


def polyline_points(p: AffinePiece, n: int = 2) -> np.ndarray:
    if p.k == 0:
        return p.origin[None, :]
    grids = np.meshgrid(*([np.linspace(-1, 1, n)] * p.k), indexing="ij")
    t = np.stack([g.ravel() for g in grids], axis=1) * p.half_extents
    return p.origin + t @ p.tangents


def count_components(clouds: list[np.ndarray], link: float, labels: list[int] | None = None) -> int:
    """Connected components of a union of point clouds.

    Each cloud is internally connected; clouds link when any two points lie
    within `link`, or when they share a label.
    """
    if not clouds:
        return 0
    owner = np.concatenate([np.full(len(c), i) for i, c in enumerate(clouds)])
    pts = np.concatenate(clouds)
    n = len(clouds)
    rows, cols = [], []
    tree = cKDTree(pts)
    for a, b in tree.query_pairs(link, output_type="ndarray"):
        rows.append(owner[a])
        cols.append(owner[b])
    if labels is not None:
        first: dict[int, int] = {}
        for i, lab in enumerate(labels):
            if lab in first:
                rows.append(first[lab])
                cols.append(i)
            else:
                first[lab] = i
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return int(connected_components(graph, directed=False)[0])


def segment_distance(a0, a1, b0, b1) -> float:
    """Exact distance between two 3-D (or any-D) segments."""
    a0, a1, b0, b1 = (np.asarray(v, dtype=float) for v in (a0, a1, b0, b1))
    d1, d2, r = a1 - a0, b1 - b0, a0 - b0
    aa, ee, f = d1 @ d1, d2 @ d2, d2 @ r
    if aa <= 1e-300 and ee <= 1e-300:
        return float(np.linalg.norm(r))
    if aa <= 1e-300:
        s, t = 0.0, np.clip(f / ee, 0, 1)
    else:
        c = d1 @ r
        if ee <= 1e-300:
            t, s = 0.0, np.clip(-c / aa, 0, 1)
        else:
            b = d1 @ d2
            den = aa * ee - b * b
            s = np.clip((b * f - c * ee) / den, 0, 1) if den > 1e-300 else 0.0
            t = (b * s + f) / ee
            if t < 0:
                t, s = 0.0, np.clip(-c / aa, 0, 1)
            elif t > 1:
                t, s = 1.0, np.clip((b - c) / aa, 0, 1)
    return float(np.linalg.norm(a0 + d1 * s - b0 - d2 * t))


def polyline_min_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Minimum distance between two polylines, exact up to segment geometry."""
    tree = cKDTree(q)
    d, _ = tree.query(p, k=1)
    best = float(d.min())
    # refine around the closest vertex pairs with exact segment distances
    order = np.argsort(d)[:8]
    for i in order:
        _, js = tree.query(p[i], k=min(4, len(q)))
        for j in np.atleast_1d(js):
            for a in (max(i - 1, 0), i):
                for b in (max(j - 1, 0), j):
                    if a + 1 < len(p) and b + 1 < len(q):
                        best = min(best, segment_distance(p[a], p[a + 1], q[b], q[b + 1]))
    return best
