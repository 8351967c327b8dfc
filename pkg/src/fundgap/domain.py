"""Convex domains: membership, distance to the boundary and its gradient.

All geometric queries accept either a single point of shape ``(dim,)`` or a
batch of shape ``(n, dim)`` and return results of matching rank. Intervals
are one dimensional and live on ``(-D/2, D/2)``; every other kind is planar.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AmbiguousGradientError(ValueError):
    """Raised when a point lies on the medial axis, where grad rho is undefined."""


class SamplingError(RuntimeError):
    pass


def _as_points(x, dim):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim <= 1
    pts = np.atleast_1d(pts).reshape(-1, dim) if single else pts
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return pts, single


def _unpack(values, single):
    return values[0] if single else values


class ConvexDomain:
    """Base class. Subclasses implement ``_geometry`` and the analytic constants."""

    kind: str = ""
    dim: int = 2

    # subclasses return (signed distance, inward unit normal, ambiguous mask)
    def _geometry(self, pts):
        raise NotImplementedError

    def _inside(self, pts):
        rho, _, _ = self._geometry(pts)
        return rho > 0

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def inradius(self) -> float:
        raise NotImplementedError

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.bounds
        return 0.5 * (lo + hi)

    def _scale(self):
        lo, hi = self.bounds
        return float(np.max(hi - lo))

    def contains(self, x):
        """True where ``x`` lies in the open interior."""
        pts, single = _as_points(x, self.dim)
        inside = self._inside(pts) & np.all(np.isfinite(pts), axis=1)
        return bool(inside[0]) if single else inside

    def _checked_geometry(self, pts):
        rho, normal, amb = self._geometry(pts)
        bad = rho < -1e-12 * self._scale()
        if np.any(bad):
            raise ValueError(f"point {pts[np.argmax(bad)]} lies outside the closure of {self.kind}")
        return np.maximum(rho, 0.0), normal, amb

    def boundary_distance(self, x):
        pts, single = _as_points(x, self.dim)
        rho, _, _ = self._checked_geometry(pts)
        return float(rho[0]) if single else rho

    def boundary_distance_gradient(self, x):
        """Unit inward normal at the nearest boundary point.

        Raises
        ------
        AmbiguousGradientError
            If any query point is equidistant from two boundary points.
        """
        pts, single = _as_points(x, self.dim)
        _, normal, amb = self._checked_geometry(pts)
        if np.any(amb):
            raise AmbiguousGradientError(
                f"{self.kind}: point {pts[np.argmax(amb)]} lies on the medial axis")
        return _unpack(normal, single)

    def distance_and_normal(self, pts):
        """Batch query used in hot loops: no validation, ambiguity resolved arbitrarily."""
        rho, normal, _ = self._geometry(np.asarray(pts, dtype=float))
        return rho, normal

    def distance_lower_bound(self, pts):
        """Cheap lower bound on rho; the exact distance unless a subclass overrides it."""
        return self._geometry(np.asarray(pts, dtype=float))[0]

    def sample_interior(self, margin: float, count: int, rng=None, max_draws: int | None = None):
        """Rejection sample ``count`` points with ``rho >= margin`` from the bounding box."""
        if margin < 0:
            raise ValueError("margin must be nonnegative")
        rng = np.random.default_rng(rng)
        lo, hi = self.bounds
        budget = max_draws if max_draws is not None else max(100_000, 200 * count)
        accepted = []
        n_acc = drawn = 0
        while n_acc < count:
            if drawn >= budget:
                raise SamplingError(
                    f"accepted {n_acc}/{count} points after {drawn} draws; "
                    f"margin {margin} is too large for {self.kind} (inradius {self.inradius})")
            batch = max(64, 2 * (count - n_acc))
            cand = lo + (hi - lo) * rng.random((batch, self.dim))
            drawn += batch
            rho = self._geometry(cand)[0]
            keep = cand[(rho > 0) & (rho >= margin)]
            accepted.append(keep)
            n_acc += len(keep)
        return np.concatenate(accepted)[:count]

    def to_spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Interval(ConvexDomain):
    D: float
    kind = "interval"
    dim = 1

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("interval length must be positive")

    def _geometry(self, pts):
        z = pts[:, 0]
        rho = 0.5 * self.D - np.abs(z)
        normal = -np.sign(z)[:, None]
        amb = z == 0
        normal[amb] = 1.0
        return rho, normal, amb

    @property
    def bounds(self):
        return np.array([-0.5 * self.D]), np.array([0.5 * self.D])

    @property
    def diameter(self):
        return float(self.D)

    @property
    def inradius(self):
        return 0.5 * self.D

    def to_spec(self):
        return {"kind": "interval", "D": self.D}


@dataclass(frozen=True)
class Disk(ConvexDomain):
    R: float
    kind = "disk"

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("disk radius must be positive")

    def _geometry(self, pts):
        r = np.hypot(pts[:, 0], pts[:, 1])
        amb = r == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            normal = -pts / r[:, None]
        normal[amb] = (1.0, 0.0)
        return self.R - r, normal, amb

    def _inside(self, pts):
        return pts[:, 0] ** 2 + pts[:, 1] ** 2 < self.R**2

    @property
    def bounds(self):
        return np.full(2, -self.R), np.full(2, self.R)

    @property
    def diameter(self):
        return 2.0 * self.R

    @property
    def inradius(self):
        return float(self.R)

    def to_spec(self):
        return {"kind": "disk", "R": self.R}


@dataclass(frozen=True)
class Rectangle(ConvexDomain):
    """Axis-aligned rectangle ``[0, w] x [0, h]``."""

    w: float
    h: float
    kind = "rectangle"

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("rectangle sides must be positive")

    def _geometry(self, pts):
        d = np.stack([pts[:, 0], self.w - pts[:, 0], pts[:, 1], self.h - pts[:, 1]], axis=1)
        order = np.argsort(d, axis=1, kind="stable")
        rows = np.arange(len(pts))
        rho = d[rows, order[:, 0]]
        amb = d[rows, order[:, 1]] - rho <= 1e-12 * max(self.w, self.h)
        normals = np.array([(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)])
        return rho, normals[order[:, 0]], amb

    @property
    def bounds(self):
        return np.zeros(2), np.array([self.w, self.h], dtype=float)

    @property
    def diameter(self):
        return float(np.hypot(self.w, self.h))

    @property
    def inradius(self):
        return 0.5 * min(self.w, self.h)

    def to_spec(self):
        return {"kind": "rectangle", "w": self.w, "h": self.h}


@dataclass(frozen=True)
class Ellipse(ConvexDomain):
    """Axis-aligned ellipse centred at the origin with semi-axes ``a >= b``."""

    a: float
    b: float
    tol: float = 1e-12
    max_iter: int = 50
    kind = "ellipse"

    def __post_init__(self):
        if not (self.b > 0 and self.a >= self.b):
            raise ValueError("ellipse needs a >= b > 0")

    def _inside(self, pts):
        return (pts[:, 0] / self.a) ** 2 + (pts[:, 1] / self.b) ** 2 < 1.0

    def _closest(self, pts):
        """Closest boundary point by safeguarded Newton on the Lagrange multiplier.

        For p = (x0, y0) the foot point is q = (a^2 x0/(u+c), b^2 y0/u) with
        c = a^2 - b^2 and u > 0 the root of f(u) = (a x0/(u+c))^2 + (b y0/u)^2 - 1
        (u = t + b^2 for the usual multiplier t, which keeps relative precision
        when the root sits next to the pole).  f is convex and decreasing, so
        Newton steps are kept inside a shrinking bracket and replaced by
        bisection when they leave it.
        """
        a, b = self.a, self.b
        if a == b:
            # a circle: radial projection, the centre is the whole medial axis
            m = np.max(np.abs(pts), axis=1)
            centre = m == 0
            with np.errstate(invalid="ignore", divide="ignore"):
                u = pts / m[:, None]
                q = a * u / np.hypot(u[:, 0], u[:, 1])[:, None]
            q[centre] = (a, 0.0)
            return q, centre
        x0 = np.abs(pts[:, 0])
        y0 = np.abs(pts[:, 1])
        qx = np.empty_like(x0)
        qy = np.empty_like(y0)

        # y0 == 0 has a closed form; inside the evolute the foot point leaves the axis.
        # Far below b the Newton root u ~ b y0 loses all precision (subnormals), and
        # the axis limit is exact to O(y0), so those points take the closed form too
        axis = y0 <= 1e-200 * b
        c2 = a * a - b * b
        off = axis & (x0 * a < c2)
        on = axis & ~off
        qx[on], qy[on] = a, 0.0
        if np.any(off):
            xc = a * a * x0[off] / c2
            qx[off] = xc
            qy[off] = b * np.sqrt(np.maximum(0.0, 1.0 - (xc / a) ** 2))

        gen = ~axis
        if np.any(gen):
            px, py = x0[gen], y0[gen]
            lo = np.maximum(b * py, a * px - c2)
            hi = np.hypot(a * px, b * py)
            u = lo.copy()
            active = np.ones(len(u), dtype=bool)
            for _ in range(self.max_iter):
                ua = u[active]
                r1 = a * px[active] / (ua + c2)
                r2 = b * py[active] / ua
                f = r1 * r1 + r2 * r2 - 1.0
                la = np.where(f > 0, ua, lo[active])
                ha = np.where(f > 0, hi[active], ua)
                # tiny u overflows df; the bracket check below falls back to bisection
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    df = -2.0 * (r1 * r1 / (ua + c2) + r2 * r2 / ua)
                    un = ua - f / df
                bad = ~np.isfinite(un) | (un < la) | (un > ha)
                un = np.where(bad, 0.5 * (la + ha), un)
                done = (np.abs(un - ua) <= self.tol * ua) | (f == 0)
                lo[active], hi[active], u[active] = la, ha, un
                idx = np.flatnonzero(active)
                active[idx[done]] = False
                if not active.any():
                    break
            qx[gen] = a * a * px / (u + c2)
            qy[gen] = b * b * py / u
        qx = np.copysign(qx, pts[:, 0])
        exact = off & (y0 == 0)
        qy = np.where(exact, qy, np.copysign(qy, pts[:, 1]))
        return np.stack([qx, qy], axis=1), exact

    def _geometry(self, pts):
        q, amb = self._closest(pts)
        diff = pts - q
        dist = np.hypot(diff[:, 0], diff[:, 1])
        inside = (pts[:, 0] / self.a) ** 2 + (pts[:, 1] / self.b) ** 2 <= 1.0
        sign = np.where(inside, 1.0, -1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            normal = sign[:, None] * diff / dist[:, None]
        # on the curve itself the inward normal is the scaled gradient of the implicit function
        on_curve = dist == 0
        if np.any(on_curve):
            g = -np.stack([pts[on_curve, 0] / self.a**2, pts[on_curve, 1] / self.b**2], axis=1)
            normal[on_curve] = g / np.linalg.norm(g, axis=1)[:, None]
        return sign * dist, normal, amb

    def distance_lower_bound(self, pts):
        # p lies on the scaled ellipse sE and E contains sE + (1 - s) b * Ball
        pts = np.asarray(pts, dtype=float)
        s = np.sqrt((pts[:, 0] / self.a) ** 2 + (pts[:, 1] / self.b) ** 2)
        return (1.0 - s) * self.b

    @property
    def bounds(self):
        return np.array([-self.a, -self.b]), np.array([self.a, self.b])

    @property
    def diameter(self):
        return 2.0 * self.a

    @property
    def inradius(self):
        return float(self.b)

    def to_spec(self):
        return {"kind": "ellipse", "a": self.a, "b": self.b}


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass(frozen=True, eq=False)
class Polygon(ConvexDomain):
    """Strictly convex polygon with counterclockwise vertices."""

    vertices: np.ndarray = field(repr=False)
    kind = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3:
            raise ValueError("polygon needs at least three vertices")
        edges = np.roll(v, -1, axis=0) - v
        turns = _cross(edges, np.roll(edges, -1, axis=0))
        if np.any(turns <= 0):
            raise ValueError("polygon vertices must be strictly convex and counterclockwise")
        object.__setattr__(self, "vertices", v)
        lengths = np.linalg.norm(edges, axis=1)
        # inward normal of a ccw edge (ex, ey) is (-ey, ex)
        object.__setattr__(self, "_normals", np.stack([-edges[:, 1], edges[:, 0]], axis=1) / lengths[:, None])

    def _geometry(self, pts):
        d = np.einsum("nkj,kj->nk", pts[:, None, :] - self.vertices[None, :, :], self._normals)
        order = np.argsort(d, axis=1, kind="stable")
        rows = np.arange(len(pts))
        rho = d[rows, order[:, 0]]
        amb = d[rows, order[:, 1]] - rho <= 1e-12 * self._scale()
        return rho, self._normals[order[:, 0]], amb

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diameter(self):
        """Rotating calipers over the antipodal vertex pairs."""
        v = self.vertices
        n = len(v)
        best = 0.0
        j = 1
        for i in range(n):
            edge = v[(i + 1) % n] - v[i]
            while _cross(edge, v[(j + 1) % n] - v[i]) > _cross(edge, v[j] - v[i]):
                j = (j + 1) % n
            best = max(best, np.linalg.norm(v[i] - v[j]), np.linalg.norm(v[(i + 1) % n] - v[j]))
        return float(best)

    @property
    def inradius(self):
        from scipy.optimize import linprog

        # Chebyshev centre: maximise r subject to n_k . (x - v_k) >= r
        A = np.hstack([-self._normals, np.ones((len(self._normals), 1))])
        b = -np.einsum("kj,kj->k", self._normals, self.vertices)
        res = linprog([0, 0, -1], A_ub=A, b_ub=b, bounds=[(None, None)] * 3)
        return float(res.x[2])

    def to_spec(self):
        return {"kind": "polygon", "vertices": self.vertices.ravel().tolist()}


_KINDS = {"interval": Interval, "disk": Disk, "rectangle": Rectangle, "ellipse": Ellipse, "polygon": Polygon}


def domain_from_spec(spec: dict) -> ConvexDomain:
    """Build a domain from ``{"kind": ..., <parameters>}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown domain kind {kind!r}; expected one of {sorted(_KINDS)}")
    if kind == "polygon":
        flat = np.asarray(spec.pop("vertices"), dtype=float).ravel()
        if flat.size % 2:
            raise ValueError("polygon vertices must be coordinate pairs")
        return Polygon(flat.reshape(-1, 2))
    return _KINDS[kind](**{k: float(v) for k, v in spec.items()})
