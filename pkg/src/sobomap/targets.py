"""Target manifolds with nearest-point and singular projections."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import AffinePiece, PieceSet


class SingularityError(ValueError):
    def __init__(self, message: str, distance: float):
        super().__init__(f"{message} (distance {distance:.3e})")
        self.distance = distance


def _rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


class TargetManifold:
    """Embedded compact manifold N in R^nu with a singular projection.

    Subclasses provide the vectorized kernels; the public helpers below
    handle shapes and singularity checks.
    """

    name: str
    ambient_dim: int
    tubular_radius: float
    sep: float
    connectivity_order: int
    sigma_codim: int

    # kernels on (n, nu) arrays -------------------------------------------
    def _project(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dist_to_sigma(self, y) -> np.ndarray:
        raise NotImplementedError

    def dist_to_manifold(self, y) -> np.ndarray:
        raise NotImplementedError

    def sigma_gradient(self, y: np.ndarray) -> np.ndarray:
        """Gradient of dist(., Sigma); finite differences by default."""
        return _fd_grad(self.dist_to_sigma, y)

    def sigma_defining_maps(self) -> list[Callable[[np.ndarray], np.ndarray]]:
        """Maps F_j: R^nu -> R^codim with Sigma_j = F_j^{-1}(0)."""
        raise NotImplementedError

    def sigma_pieces(self, radius: float = 4.0, n: int = 400) -> PieceSet:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def projection_jacobian(self, y: np.ndarray) -> np.ndarray:
        return _fd_jacobian(self._project, y, self.dist_to_sigma(y))

    def projection_hessian(self, y: np.ndarray) -> np.ndarray:
        return _fd_jacobian(self.projection_jacobian, y, self.dist_to_sigma(y))

    # public ---------------------------------------------------------------
    def membership(self, x, tol: float = 1e-10) -> np.ndarray:
        y, single = _rows(x)
        out = self.dist_to_manifold(y) <= tol
        return bool(out[0]) if single else out

    def nearest_projection(self, x):
        y, single = _rows(x)
        d = self.dist_to_manifold(y)
        if (d >= self.tubular_radius).any():
            raise ValueError(f"point at distance {d.max():.3g} is outside the tubular neighbourhood")
        out = self._project(y)
        return out[0] if single else out

    def singular_project(self, x):
        return singular_project(self, x)

    def to_dict(self) -> dict:
        return {"name": self.name}


def _fd_jacobian(f, y: np.ndarray, dist: np.ndarray) -> np.ndarray:
    y = np.atleast_2d(y)
    h = 1e-5 * np.maximum(dist, 1e-300)
    cols = []
    for k in range(y.shape[1]):
        e = np.zeros(y.shape[1])
        e[k] = 1.0
        step = h[:, None] * e
        cols.append((f(y + step) - f(y - step)) / (2 * h.reshape((-1,) + (1,) * (f(y[:1]).ndim - 1))))
    return np.stack(cols, axis=-1)


def _fd_grad(f, y: np.ndarray) -> np.ndarray:
    y = np.atleast_2d(y)
    h = 1e-6
    out = np.empty_like(y)
    for k in range(y.shape[1]):
        e = np.zeros(y.shape[1])
        e[k] = h
        out[:, k] = (f(y + e) - f(y - e)) / (2 * h)
    return out


@dataclass
class Sphere(TargetManifold):
    N: int = 1

    def __post_init__(self):
        self.name = f"sphere:{self.N}"
        self.ambient_dim = self.N + 1
        self.tubular_radius = 0.5
        self.sep = 1.0
        self.connectivity_order = self.N - 1
        self.sigma_codim = self.N + 1

    def _project(self, y):
        return y / np.linalg.norm(y, axis=1, keepdims=True)

    def dist_to_sigma(self, y):
        return np.linalg.norm(np.atleast_2d(y), axis=1)

    def dist_to_manifold(self, y):
        return np.abs(np.linalg.norm(np.atleast_2d(y), axis=1) - 1.0)

    def sigma_gradient(self, y):
        y = np.atleast_2d(y)
        return y / np.linalg.norm(y, axis=1, keepdims=True)

    def sigma_defining_maps(self):
        return [lambda y: np.atleast_2d(y)]

    def sigma_pieces(self, radius: float = 4.0, n: int = 400) -> PieceSet:
        return PieceSet([AffinePiece.point(np.zeros(self.ambient_dim))], self.ambient_dim)

    def projection_jacobian(self, y):
        y = np.atleast_2d(y)
        r = np.linalg.norm(y, axis=1)
        u = y / r[:, None]
        eye = np.eye(y.shape[1])
        return (eye[None] - u[:, :, None] * u[:, None, :]) / r[:, None, None]

    def projection_hessian(self, y):
        # d_j d_k (y_i / r)
        y = np.atleast_2d(y)
        r = np.linalg.norm(y, axis=1)[:, None, None, None]
        d = np.eye(y.shape[1])
        yi = y[:, :, None, None]
        yj = y[:, None, :, None]
        yk = y[:, None, None, :]
        t = d[None, :, :, None] * yk + d[None, :, None, :] * yj + d[None, None, :, :] * yi
        return -t / r**3 + 3 * yi * yj * yk / r**5

    def sample(self, n, rng):
        z = rng.normal(size=(n, self.ambient_dim))
        return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass
class Torus(TargetManifold):
    """Torus of revolution about the x3 axis, radii (2, 1)."""

    major: float = 2.0
    minor: float = 1.0

    def __post_init__(self):
        self.name = "torus"
        self.ambient_dim = 3
        self.tubular_radius = 0.5
        self.sep = min(self.minor, self.major - self.minor)
        self.connectivity_order = 0
        self.sigma_codim = 2

    def _core(self, y):
        rho = np.hypot(y[:, 0], y[:, 1])
        c = np.zeros_like(y)
        c[:, 0] = self.major * y[:, 0] / rho
        c[:, 1] = self.major * y[:, 1] / rho
        return c

    def _project(self, y):
        c = self._core(y)
        v = y - c
        return c + self.minor * v / np.linalg.norm(v, axis=1, keepdims=True)

    def dist_to_sigma(self, y):
        y = np.atleast_2d(y)
        rho = np.hypot(y[:, 0], y[:, 1])
        return np.minimum(rho, np.hypot(rho - self.major, y[:, 2]))

    def dist_to_manifold(self, y):
        y = np.atleast_2d(y)
        rho = np.hypot(y[:, 0], y[:, 1])
        return np.abs(np.hypot(rho - self.major, y[:, 2]) - self.minor)

    def sigma_defining_maps(self):
        def axis(y):
            y = np.atleast_2d(y)
            return y[:, :2]

        def core(y):
            y = np.atleast_2d(y)
            return np.stack([np.hypot(y[:, 0], y[:, 1]) - self.major, y[:, 2]], axis=1)

        return [axis, core]

    def sigma_pieces(self, radius: float = 4.0, n: int = 400) -> PieceSet:
        t = np.linspace(0, 2 * np.pi, n + 1)
        circle = np.stack([self.major * np.cos(t), self.major * np.sin(t), 0 * t], axis=1)
        line = np.array([[0, 0, -radius], [0, 0, radius]], dtype=float)
        return PieceSet.from_polylines([circle, line])

    def sample(self, n, rng):
        th, ph = rng.uniform(0, 2 * np.pi, size=(2, n))
        rr = self.major + self.minor * np.cos(ph)
        return np.stack([rr * np.cos(th), rr * np.sin(th), self.minor * np.sin(ph)], axis=1)

    def parameterize(self, theta, phi):
        rr = self.major + self.minor * np.cos(phi)
        return np.stack([rr * np.cos(theta), rr * np.sin(theta), self.minor * np.sin(phi)], axis=-1)


def target_from_name(name: str) -> TargetManifold:
    name = name.strip().lower()
    if name == "torus":
        return Torus()
    if name.startswith("sphere:"):
        N = int(name.split(":", 1)[1])
        if N < 0:
            raise ValueError("sphere dimension must be >= 0")
        return Sphere(N)
    raise ValueError(f"unknown target {name!r}; expected 'sphere:N' or 'torus'")


def singular_project(t: TargetManifold, x, tol: float = 1e-12):
    """P(x), raising SingularityError within `tol` of the singular set."""
    y, single = _rows(x)
    d = t.dist_to_sigma(y)
    if (d <= tol).any():
        raise SingularityError("point lies on the singular set", float(d.min()))
    out = t._project(y)
    return out[0] if single else out


@dataclass
class DerivativeBound:
    j: int
    constant: float
    mean_value_constant: float
    samples: int


def _op_norm(a: np.ndarray) -> np.ndarray:
    if a.ndim == 3:
        return np.linalg.norm(a, ord=2, axis=(1, 2))
    return np.sqrt((a.reshape(a.shape[0], -1) ** 2).sum(axis=1))


def projection_derivative_bound_check(t: TargetManifold, j: int, samples: int,
                                      rng: np.random.Generator | None = None,
                                      radius: float | None = None,
                                      method: str = "auto") -> DerivativeBound:
    """Fit C_j = sup |D^j P(x)| dist(x, Sigma)^j over random samples in a ball.

    |.| is the operator norm for j = 1 and the Frobenius norm for j = 2.
    Also fits the mean-value constant
    sup |D^j P(x) - D^j P(y)| dist(x, Sigma)^(j+1) / |x - y| over pairs with
    dist(x) <= dist(y).
    """
    if samples < 100:
        raise ValueError("at least 100 samples are required")
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    rng = rng or np.random.default_rng(0)
    R = radius if radius is not None else 2.0 * max(2.0, getattr(t, "major", 1.0) + 1.0)
    nu = t.ambient_dim

    def draw(n):
        out = np.empty((0, nu))
        while out.shape[0] < n:
            z = rng.normal(size=(2 * n, nu))
            z *= (R * rng.uniform(size=(2 * n, 1)) ** (1 / nu)) / np.linalg.norm(z, axis=1, keepdims=True)
            keep = t.dist_to_sigma(z) > 1e-6 * R
            out = np.concatenate([out, z[keep]])
        return out[:n]

    def jet(y):
        analytic = isinstance(t, Sphere) and method != "fd"
        if j == 1:
            return t.projection_jacobian(y) if analytic else _fd_jacobian(t._project, y, t.dist_to_sigma(y))
        if analytic:
            return t.projection_hessian(y)
        return _fd_jacobian(lambda z: _fd_jacobian(t._project, z, t.dist_to_sigma(z)), y, t.dist_to_sigma(y))

    x = draw(samples)
    dx = t.dist_to_sigma(x)
    Dx = jet(x)
    C = float((_op_norm(Dx) * dx**j).max())
    y = draw(samples)
    dy = t.dist_to_sigma(y)
    Dy = jet(y)
    swap = dx > dy
    dmin = np.where(swap, dy, dx)
    diff = _op_norm(Dx - Dy)
    gap = np.linalg.norm(x - y, axis=1)
    ok = gap > 0
    mv = float((diff[ok] * dmin[ok] ** (j + 1) / gap[ok]).max())
    return DerivativeBound(j, C, mv, samples)


def homogeneous_extension(f: Callable[[np.ndarray], np.ndarray], i: int) -> Callable:
    """x -> f(x / |x|_inf) on Q^i minus the origin."""

    def g(x):
        y, single = _rows(x)
        if y.shape[1] != i:
            raise ValueError(f"expected points in R^{i}")
        s = np.abs(y).max(axis=1)
        if (s == 0).any():
            raise SingularityError("homogeneous extension is singular at the origin", 0.0)
        out = np.asarray(f(y / s[:, None]))
        return out[0] if single else out

    return g


def sigma_distance_between(t: TargetManifold, n: int = 20000) -> float:
    """min dist(Sigma, N) estimated by minimizing over parameterized samples."""
    from scipy.optimize import minimize

    if isinstance(t, Sphere):
        return float(np.min(t.dist_to_sigma(t.sample(n, np.random.default_rng(0)))))
    th = np.linspace(0, 2 * np.pi, int(np.sqrt(n)), endpoint=False)
    TH, PH = np.meshgrid(th, th)
    pts = t.parameterize(TH.ravel(), PH.ravel())
    d = t.dist_to_sigma(pts)
    i = int(np.argmin(d))
    res = minimize(lambda v: float(t.dist_to_sigma(t.parameterize(v[0], v[1])[None])[0]),
                   [TH.ravel()[i], PH.ravel()[i]], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12})
    return float(min(res.fun, d.min()))
