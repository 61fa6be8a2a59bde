"""Cubications of [-1, 1]^m, their skeletons and dual skeletons.

All face coordinates are exact rationals.  Floats only appear when a
distance is requested.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an operation is called outside its admissible range."""


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**9)
    return Fraction(v)


@dataclass(frozen=True, order=True)
class Face:
    """Open box: `axes` are the directions it extends in, the other
    coordinates are pinned to `center`."""

    center: tuple[Fraction, ...]
    axes: tuple[int, ...]
    halfwidth: Fraction

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def ambient(self) -> int:
        return len(self.center)

    def bounds(self) -> tuple[tuple[Fraction, ...], tuple[Fraction, ...]]:
        lo = list(self.center)
        hi = list(self.center)
        for a in self.axes:
            lo[a] -= self.halfwidth
            hi[a] += self.halfwidth
        return tuple(lo), tuple(hi)

    def as_float(self):
        """(center, half-extent per coordinate) as float arrays."""
        c = np.array([float(v) for v in self.center])
        h = np.zeros(len(self.center))
        h[list(self.axes)] = float(self.halfwidth)
        return c, h

    def to_dict(self) -> dict:
        return {
            "center": [str(v) for v in self.center],
            "axes": list(self.axes),
            "halfwidth": str(self.halfwidth),
        }


@dataclass(frozen=True)
class Cubication:
    """Grid of cubes of inradius `eta` tiling [-1, 1]^m.

    `eta` must be 1/n.  The uncrossing constructions use n even; n = 1
    is the single unit cube.
    """

    m: int
    eta: Fraction
    offset: tuple[Fraction, ...] = field(default=())

    def __post_init__(self):
        eta = _frac(self.eta)
        object.__setattr__(self, "eta", eta)
        if self.m < 2:
            raise DomainError(f"dimension m={self.m} must be >= 2")
        if eta <= 0 or eta.numerator != 1:
            raise DomainError(f"inradius {eta} must be 1/n for a positive integer n")
        off = tuple(_frac(v) for v in self.offset) or (Fraction(0),) * self.m
        if len(off) != self.m:
            raise DomainError("offset has wrong length")
        if any(v != 0 for v in off):
            raise DomainError("nonzero offset is not supported")
        object.__setattr__(self, "offset", off)

    @classmethod
    def unit(cls, m: int) -> "Cubication":
        return cls(m, Fraction(1))

    @property
    def per_axis(self) -> int:
        return self.eta.denominator

    def centers_1d(self) -> list[Fraction]:
        """Cube-center coordinates along one axis (odd multiples of eta)."""
        return [-1 + (2 * i + 1) * self.eta for i in range(self.per_axis)]

    def vertices_1d(self) -> list[Fraction]:
        return [-1 + 2 * i * self.eta for i in range(self.per_axis + 1)]

    def cube_centers(self) -> list[tuple[Fraction, ...]]:
        return list(itertools.product(self.centers_1d(), repeat=self.m))

    def to_dict(self) -> dict:
        return {"m": self.m, "eta": str(self.eta)}


@dataclass(frozen=True)
class DualSkeleton:
    star_dimension: int
    pieces: tuple[Face, ...]
    source: Cubication
    skeleton_dimension: int

    def __len__(self):
        return len(self.pieces)

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        return dist_to_set(x, self) <= tol


def _check_level(c: Cubication, ell: int, upper: int) -> None:
    if not (0 <= ell <= upper):
        raise DomainError(f"skeleton dimension {ell} outside [0, {upper}] for m={c.m}")


def enumerate_skeleton(c: Cubication, ell: int) -> list[Face]:
    """Every ell-face of every cube, deduplicated and sorted."""
    _check_level(c, ell, c.m)
    mids, verts = c.centers_1d(), c.vertices_1d()
    faces = []
    for axes in itertools.combinations(range(c.m), ell):
        choices = [mids if k in axes else verts for k in range(c.m)]
        for center in itertools.product(*choices):
            faces.append(Face(tuple(center), axes, c.eta))
    faces.sort(key=lambda f: (f.center, f.axes))
    return faces


def faces_of_cube(m: int, ell: int) -> list[Face]:
    """ell-faces of the single cube [-1, 1]^m by brute force over sign patterns."""
    out = set()
    for axes in itertools.combinations(range(m), ell):
        fixed = [k for k in range(m) if k not in axes]
        for signs in itertools.product((-1, 1), repeat=len(fixed)):
            center = [Fraction(0)] * m
            for k, s in zip(fixed, signs):
                center[k] = Fraction(s)
            out.add(Face(tuple(center), axes, Fraction(1)))
    return sorted(out, key=lambda f: (f.center, f.axes))


def dual_skeleton(c: Cubication, ell: int) -> DualSkeleton:
    """Maximal affine pieces of the dual of the ell-skeleton.

    Within a cube, a point is in the dual when at least ell+1 of its
    local coordinates vanish.  Collinear/coplanar pieces of neighbouring
    cubes are merged, so every piece spans [-1, 1] in its free axes.
    """
    if ell == c.m:
        raise DomainError("dual skeleton of the full m-skeleton is undefined")
    _check_level(c, ell, c.m - 1)
    star = c.m - ell - 1
    mids = c.centers_1d()
    pieces = []
    for free in itertools.combinations(range(c.m), star):
        pinned = [k for k in range(c.m) if k not in free]
        for vals in itertools.product(mids, repeat=len(pinned)):
            center = [Fraction(0)] * c.m
            for k, v in zip(pinned, vals):
                center[k] = v
            pieces.append(Face(tuple(center), free, Fraction(1)))
    pieces.sort(key=lambda f: (f.center, f.axes))
    return DualSkeleton(star, tuple(pieces), c, ell)


def unit_dual_membership(x, ell: int, tol: float = 0.0) -> np.ndarray:
    """Coordinate-count test on the single unit cube: >= ell+1 zero coordinates."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return (np.abs(x) <= tol).sum(axis=1) >= ell + 1


def _pieces(s) -> Sequence[Face]:
    if isinstance(s, DualSkeleton):
        return s.pieces
    return list(s)


def dist_to_set(x, s, norm: str = "euclidean") -> np.ndarray | float:
    """Distance from x (one point or an (n, m) array) to a union of closed boxes.

    An empty union gives +inf.
    """
    if norm not in ("euclidean", "sup"):
        raise DomainError(f"unknown norm {norm!r}")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    pieces = _pieces(s)
    if not pieces:
        out = np.full(pts.shape[0], np.inf)
        return float(out[0]) if single else out
    centers = np.array([p.as_float()[0] for p in pieces])
    halves = np.array([p.as_float()[1] for p in pieces])
    best = np.full(pts.shape[0], np.inf)
    # blocks of pieces keep memory at n * block * m
    block = max(1, 4_000_000 // max(1, pts.shape[0] * pts.shape[1]))
    for k in range(0, len(pieces), block):
        excess = np.abs(pts[:, None, :] - centers[None, k:k + block]) - halves[None, k:k + block]
        np.maximum(excess, 0.0, out=excess)
        if norm == "sup":
            d = excess.max(axis=2)
        else:
            d = np.sqrt((excess * excess).sum(axis=2))
        best = np.minimum(best, d.min(axis=1))
    return float(best[0]) if single else best


@dataclass(frozen=True)
class Crossing:
    lo: tuple[Fraction, ...]
    hi: tuple[Fraction, ...]
    pieces: tuple[int, ...]

    @property
    def dimension(self) -> int:
        return sum(1 for a, b in zip(self.lo, self.hi) if b > a)

    @property
    def is_point(self) -> bool:
        return self.dimension == 0

    def sample(self, n: int) -> np.ndarray:
        """Points spread over the crossing set, kept inside the open cube."""
        lo = np.array([float(v) for v in self.lo])
        hi = np.array([float(v) for v in self.hi])
        lo = np.maximum(lo, -1 + 1e-9)
        hi = np.minimum(hi, 1 - 1e-9)
        d = self.dimension
        if d == 0:
            return ((lo + hi) / 2)[None, :]
        k = max(2, int(round(n ** (1.0 / d))))
        ts = np.linspace(0.0, 1.0, k)
        grids = np.meshgrid(*([ts] * d), indexing="ij")
        free = [i for i in range(len(lo)) if hi[i] > lo[i]]
        out = np.tile((lo + hi) / 2, (grids[0].size, 1))
        for g, i in zip(grids, free):
            out[:, i] = lo[i] + g.ravel() * (hi[i] - lo[i])
        return out


def crossing_points(s) -> list[Crossing]:
    """Pairwise intersections of piece closures that meet the open cube.

    Intersections with the same point set are merged into one entry
    listing all incident pieces.
    """
    pieces = _pieces(s)
    if not pieces:
        return []
    dims = {p.dimension for p in pieces}
    if len(dims) > 1:
        raise DomainError(f"pieces have mixed dimensions {sorted(dims)}")
    bounds = [p.bounds() for p in pieces]
    groups: dict[tuple, set[int]] = {}
    for i, j in itertools.combinations(range(len(pieces)), 2):
        (lo_i, hi_i), (lo_j, hi_j) = bounds[i], bounds[j]
        lo = tuple(max(a, b) for a, b in zip(lo_i, lo_j))
        hi = tuple(min(a, b) for a, b in zip(hi_i, hi_j))
        if any(a > b for a, b in zip(lo, hi)):
            continue
        if any(a >= 1 or b <= -1 for a, b in zip(lo, hi)):
            continue
        groups.setdefault((lo, hi), set()).update((i, j))
    return [Crossing(lo, hi, tuple(sorted(idx))) for (lo, hi), idx in sorted(groups.items())]


def brute_force_crossings(s) -> int:
    """Count intersecting pairs by sampling each piece on a lattice.

    Independent of `crossing_points`; used as its test oracle.
    """
    pieces = _pieces(s)
    pts = []
    for p in pieces:
        c, h = p.as_float()
        grids = [np.linspace(c[k] - h[k], c[k] + h[k], 9) if h[k] > 0 else np.array([c[k]])
                 for k in range(len(c))]
        pts.append(np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(c)))
    count = 0
    for i, j in itertools.combinations(range(len(pieces)), 2):
        d = np.abs(pts[i][:, None, :] - pts[j][None, :, :]).max(axis=2)
        inside = (np.abs(pts[i]) < 1).all(axis=1)
        if (d[inside] < 1e-12).any():
            count += 1
    return count


def skeleton_points(c: Cubication, ell: int, per_face: int = 5) -> np.ndarray:
    """Sample points spread over the ell-skeleton."""
    out = []
    for f in enumerate_skeleton(c, ell):
        ctr, h = f.as_float()
        grids = [np.linspace(ctr[k] - h[k], ctr[k] + h[k], per_face) if h[k] > 0 else np.array([ctr[k]])
                 for k in range(c.m)]
        out.append(np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, c.m))
    return np.concatenate(out)


def pieces_to_json(pieces: Iterable[Face], dimension: int) -> dict:
    return {"dimension": dimension, "pieces": [p.to_dict() for p in pieces]}
