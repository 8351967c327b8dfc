"""Continuous evaluation of phi0 and grad log phi0 from a grid eigenpair.

Node values of ``grad log phi0`` are central differences of ``log phi0``;
between nodes they are multilinearly interpolated.  Close to the boundary,
where ``phi0 -> 0`` makes the differences meaningless, the field switches to
the boundary asymptote ``grad rho / rho`` (``rho`` the distance to the
boundary), blended linearly over ``[clamp, 2*clamp]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .eigensolver import GroundState, central_difference


class FieldDomainError(ValueError):
    """A query point (or a stencil around it) is outside the usable domain."""


def _shift(arr, steps):
    """out[i] = arr[i + steps] (NaN past the edge); ``steps`` maps axis -> offset."""
    out = np.full_like(arr, np.nan)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    for axis, k in steps.items():
        if k > 0:
            src[axis], dst[axis] = slice(k, None), slice(0, -k)
        elif k < 0:
            src[axis], dst[axis] = slice(0, k), slice(-k, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _points(x, dim):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    return arr.reshape(-1, dim), single


class LogGradientField:
    """``grad log phi0`` (and friends) as functions on the domain.

    Parameters
    ----------
    groundstate : GroundState
        Must carry its domain.
    clamp_radius : float, optional
        Width of the band next to the boundary handled by the asymptote.
        Defaults to ``3 h``; it must be at least ``(1 + sqrt(2)) h`` so that
        interpolation outside the band only touches valid node differences.
    """

    def __init__(self, groundstate: GroundState, clamp_radius: float | None = None):
        if groundstate.domain is None:
            raise ValueError("ground state has no domain attached")
        self.groundstate = groundstate
        self.domain = groundstate.domain
        self.grid = grid = groundstate.grid
        self.h = h = grid.h
        self.dim = grid.dim
        self.clamp_radius = 3.0 * h if clamp_radius is None else float(clamp_radius)

        phi = grid.full(groundstate.phi0, fill=0.0)
        with np.errstate(divide="ignore"):
            logphi = np.log(phi)
        logphi[~grid.mask] = np.nan
        self._phi = phi
        self._logphi = logphi
        self._grad = np.stack([central_difference(logphi, i, h) for i in range(self.dim)], axis=-1)
        self._grad_phi = np.stack([central_difference(phi, i, h) for i in range(self.dim)], axis=-1)
        self._ratio = self._extended_ratio(groundstate)
        self._hessian = None
        self._flat_cache = {}
        self._strides = np.array([int(np.prod(grid.shape[i + 1:])) for i in range(self.dim)])
        self._corners = [(bits, int(np.dot(bits, self._strides)))
                         for bits in itertools.product((0, 1), repeat=self.dim)]

    def _extended_ratio(self, gs):
        """phi1/phi0 on the interior, averaged outward one ring, then nearest-node fill
        for the rest of the lattice so every cell meeting the domain is usable."""
        grid = self.grid
        ratio = grid.full(gs.phi1 / gs.phi0, fill=np.nan)
        total = np.zeros(grid.shape)
        count = np.zeros(grid.shape)
        for axis, step in itertools.product(range(self.dim), (-1, 1)):
            shifted = np.roll(ratio, step, axis=axis)
            edge = [slice(None)] * self.dim
            edge[axis] = 0 if step == 1 else -1
            shifted[tuple(edge)] = np.nan
            ok = np.isfinite(shifted)
            total[ok] += shifted[ok]
            count[ok] += 1
        ring = ~grid.mask & (count > 0)
        ratio[ring] = total[ring] / count[ring]
        known = np.isfinite(ratio)
        nearest = ndimage.distance_transform_edt(~known, return_distances=False, return_indices=True)
        return ratio[tuple(nearest)]

    # -- interpolation ---------------------------------------------------

    def _interp(self, arr, pts):
        """Multilinear interpolation; returns (values, valid) with valid False where a
        corner carrying positive weight is NaN."""
        grid = self.grid
        flat, bad, cell_bad = self._flat(arr)
        lin = np.zeros(len(pts), dtype=np.int64)
        fr = []
        for i in range(self.dim):
            t = (pts[:, i] - grid.origin[i]) * (1.0 / self.h)
            base = np.minimum(np.maximum(np.floor(t).astype(np.int64), 0), grid.shape[i] - 2)
            fr.append(t - base)
            lin += base * self._strides[i]
        weights = []
        out = np.zeros((len(pts), flat.shape[1]))
        for bits, offset in self._corners:
            w = fr[0] if bits[0] else 1.0 - fr[0]
            for i in range(1, self.dim):
                w = w * (fr[i] if bits[i] else 1.0 - fr[i])
            weights.append(w)
            out += w[:, None] * np.take(flat, lin + offset, axis=0)
        valid = ~np.take(cell_bad, lin)
        suspect = np.flatnonzero(~valid)
        if suspect.size:
            ok = np.ones(suspect.size, dtype=bool)
            for (bits, offset), w in zip(self._corners, weights):
                ok &= ~(bad[lin[suspect] + offset] & (w[suspect] > 0))
            valid[suspect] = ok
        return out.reshape((len(pts),) + arr.shape[self.dim:]), valid

    def _flat(self, arr):
        """Node-major NaN-free copy of ``arr``, its NaN mask and a per-cell
        "some corner is NaN" mask (cached per array)."""
        key = id(arr)
        if key not in self._flat_cache:
            flat = arr.reshape(int(np.prod(self.grid.shape)), -1)
            bad = np.isnan(flat).any(axis=1)
            cell_bad = bad.copy()
            n = len(bad)
            for _, offset in self._corners[1:]:
                cell_bad[: n - offset] |= bad[offset:]
            self._flat_cache[key] = (arr, np.where(np.isnan(flat), 0.0, flat), bad, cell_bad)
        return self._flat_cache[key][1:]

    def _check_inside(self, pts):
        inside = self.domain.contains(pts)
        if not np.all(inside):
            raise FieldDomainError(f"point {pts[np.argmin(inside)]} is not inside the domain")

    def raw_log_gradient_batch(self, pts):
        """Interpolated node differences only (no boundary treatment)."""
        return self._interp(self._grad, pts)

    def log_gradient_batch(self, pts):
        """Unchecked batch evaluation used by the simulator."""
        pts = np.asarray(pts, dtype=float)
        c = self.clamp_radius
        out, valid = self._interp(self._grad, pts)
        near = ~valid | (self.domain.distance_lower_bound(pts) < 2.0 * c)
        if np.any(near):
            rho, normal = self.domain.distance_and_normal(pts[near])
            asym = normal / np.maximum(rho, 1e-300)[:, None]
            w = np.clip((rho - c) / c, 0.0, 1.0)
            w = np.where(valid[near], w, 0.0)[:, None]
            out[near] = w * out[near] + (1.0 - w) * asym
        return out

    def log_gradient(self, x):
        """``grad log phi0`` at one point or a batch; points must be interior."""
        pts, single = _points(x, self.dim)
        self._check_inside(pts)
        out = self.log_gradient_batch(pts)
        return out[0] if single else out

    def raw_log_gradient(self, x):
        pts, single = _points(x, self.dim)
        self._check_inside(pts)
        out, valid = self.raw_log_gradient_batch(pts)
        out[~valid] = np.nan
        return out[0] if single else out

    def log_phi0(self, x):
        pts, single = _points(x, self.dim)
        out, valid = self._interp(self._logphi, pts)
        out[~valid] = np.nan
        return out[0] if single else out

    def phi0(self, x):
        pts, single = _points(x, self.dim)
        out, _ = self._interp(self._phi, pts)
        return out[0] if single else out

    def grad_phi0(self, x):
        pts, single = _points(x, self.dim)
        out, _ = self._interp(self._grad_phi, pts)
        return out[0] if single else out

    def _node_hessian(self):
        if self._hessian is None:
            u, h, d = self._logphi, self.h, self.dim
            H = np.full(u.shape + (d, d), np.nan)
            for i in range(d):
                H[..., i, i] = (_shift(u, {i: 1}) - 2 * u + _shift(u, {i: -1})) / h**2
                for j in range(i + 1, d):
                    cross = (_shift(u, {i: 1, j: 1}) - _shift(u, {i: 1, j: -1})
                             - _shift(u, {i: -1, j: 1}) + _shift(u, {i: -1, j: -1})) / (4 * h**2)
                    H[..., i, j] = H[..., j, i] = cross
            self._hessian = H
        return self._hessian

    def ratio_batch(self, pts):
        """``phi1/phi0`` interpolated from the (boundary-extended) node ratio."""
        out, valid = self._interp(self._ratio, np.asarray(pts, dtype=float))
        out[~valid] = np.nan
        return out


def F(field: LogGradientField, x, y):
    """``<grad log phi0(x) - grad log phi0(y), (x - y)/|x - y|>``."""
    xs, single = _points(x, field.dim)
    ys, _ = _points(y, field.dim)
    diff = xs - ys
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist < 1e-14):
        raise ValueError("F is undefined for coincident points")
    field._check_inside(xs)
    field._check_inside(ys)
    alpha = field.log_gradient_batch(xs) - field.log_gradient_batch(ys)
    out = np.einsum("ij,ij->i", alpha, diff) / dist
    return float(out[0]) if single else out


def chord_product(field, xs, ys):
    """Unchecked batch version of :func:`F`; zero where the points coincide."""
    diff = xs - ys
    dist = np.linalg.norm(diff, axis=1)
    alpha = field.log_gradient_batch(xs) - field.log_gradient_batch(ys)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.einsum("ij,ij->i", alpha, diff) / dist
    return np.where(dist > 0, out, 0.0)


# -- comparison function for the interval ----------------------------------

def _check_psi_domain(D, z):
    z = np.asarray(z, dtype=float)
    if np.any(z >= 0.5 * D) or np.any(z < 0):
        raise ValueError(f"psi_D is only defined on [0, D/2) (D={D})")
    return z


def psi(D, z):
    """Log-derivative of cos(pi z / D): ``-(pi/D) tan(pi z / D)``."""
    z = _check_psi_domain(D, z)
    return -(np.pi / D) * np.tan(np.pi * z / D)


def psi_prime(D, z):
    z = _check_psi_domain(D, z)
    return -(np.pi / D) ** 2 / np.cos(np.pi * z / D) ** 2


def psi_second(D, z):
    z = _check_psi_domain(D, z)
    s = np.pi * z / D
    return -2.0 * (np.pi / D) ** 3 * np.tan(s) / np.cos(s) ** 2


def twice_psi_prime(z, D):
    """Integrand of the exponential weight; argument order suits ``functools.partial``."""
    return 2.0 * psi_prime(D, np.minimum(z, 0.5 * D * (1 - 1e-12)))


# -- probes ----------------------------------------------------------------

def hessian_probe(field: LogGradientField, x, direction):
    """Second directional derivative of log phi0, ``<H d, d>`` with ``|d| = 1``.

    ``H`` comes from step-h central differences of log phi0 at the nodes
    (axis second differences and the four-point cross stencil) and is
    interpolated between nodes.  Differencing the interpolant itself at
    sub-cell offsets is avoided: near the boundary log phi0 varies like
    log(rho) and the interpolation error would dominate.
    """
    pts, single = _points(x, field.dim)
    d = np.asarray(direction, dtype=float).reshape(-1, field.dim)
    d = d / np.linalg.norm(d, axis=1)[:, None]
    H = hessian_matrix(field, pts)
    out = np.einsum("ni,nij,nj->n", np.broadcast_to(d, pts.shape), H, np.broadcast_to(d, pts.shape))
    return float(out[0]) if single else out


def hessian_matrix(field: LogGradientField, x):
    """Interpolated node Hessian of log phi0 at one point or a batch."""
    pts, single = _points(x, field.dim)
    field._check_inside(pts)
    H, valid = field._interp(field._node_hessian(), pts)
    if not np.all(valid):
        raise FieldDomainError("hessian stencil touches nodes outside the grid interior")
    return H[0] if single else H


# innermost probe distance, in units of h, for the Hessian eigenvalue bound
HESSIAN_BOUND_BAND = 4.0


@dataclass
class BoundaryProfile:
    """Near-boundary behaviour of the ground state along probe points."""

    distances: np.ndarray
    normal_products: np.ndarray
    hessian_bounds: np.ndarray | None = None  # NaN inside HESSIAN_BOUND_BAND
    normal_hessian_products: np.ndarray | None = None
    gradient_norm_range: tuple | None = None
    points: np.ndarray | None = None


def boundary_anchors(domain, count: int = 8):
    """Boundary points with their inward normals, away from corners."""
    kind = domain.kind
    if kind == "interval":
        half = 0.5 * domain.D
        return np.array([[half], [-half]]), np.array([[-1.0], [1.0]])
    s = (np.arange(count) + 0.5) / count
    if kind == "disk":
        th = 2 * np.pi * s + 0.1
        q = domain.R * np.stack([np.cos(th), np.sin(th)], 1)
        return q, -q / domain.R
    if kind == "ellipse":
        th = 2 * np.pi * s + 0.1
        q = np.stack([domain.a * np.cos(th), domain.b * np.sin(th)], 1)
        n = -np.stack([np.cos(th) / domain.a, np.sin(th) / domain.b], 1)
        return q, n / np.linalg.norm(n, axis=1)[:, None]
    if kind == "rectangle":
        per = max(1, count // 4)
        f = 0.3 + 0.4 * (np.arange(per) + 0.5) / per
        w, hh = domain.w, domain.h
        qs = [np.stack([f * w, np.zeros(per)], 1), np.stack([f * w, np.full(per, hh)], 1),
              np.stack([np.zeros(per), f * hh], 1), np.stack([np.full(per, w), f * hh], 1)]
        ns = [(0.0, 1.0), (0.0, -1.0), (1.0, 0.0), (-1.0, 0.0)]
        return np.concatenate(qs), np.concatenate([np.tile(n, (per, 1)) for n in ns])
    if kind == "polygon":
        v = domain.vertices
        e = np.roll(v, -1, axis=0) - v
        q = v + 0.5 * e
        return q, domain._normals.copy()
    raise ValueError(f"no anchors for {kind}")


def probe_points(domain, distances, count: int = 8):
    """Probe points ``anchor + rho * normal`` for every anchor and distance.

    Returns an array of shape ``(len(distances), n_anchors, dim)``.
    """
    q, n = boundary_anchors(domain, count)
    rhos = np.asarray(distances, dtype=float)
    return q[None, :, :] + rhos[:, None, None] * n[None, :, :]


def boundary_normal_product(field: LogGradientField, points, raw: bool = True):
    """``rho <grad log phi0, grad rho>`` at probe points.

    ``raw=True`` uses the grid interpolation without the boundary asymptote
    (points where that is unavailable give NaN).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, field.dim)
    rho = field.domain.boundary_distance(pts)
    normal = field.domain.boundary_distance_gradient(pts)
    if raw:
        g, valid = field.raw_log_gradient_batch(pts)
        g[~valid] = np.nan
    else:
        g = field.log_gradient(pts)
    return rho, rho * np.einsum("ij,ij->i", g, normal)


def boundary_profile(field: LogGradientField, distances, count: int = 8) -> BoundaryProfile:
    """Normal products, Hessian bounds and the boundary gradient-norm range."""
    distances = np.sort(np.asarray(distances, dtype=float))[::-1]
    if np.any(np.diff(distances) >= 0) or distances.min() < 2 * field.h - 1e-15:
        raise ValueError("probe distances must be distinct and at least 2h")
    grid_pts = probe_points(field.domain, distances, count)
    n_d, n_a, dim = grid_pts.shape
    flat = grid_pts.reshape(-1, dim)
    rho, prod = boundary_normal_product(field, flat, raw=True)
    normal = field.domain.boundary_distance_gradient(flat)
    hess_max = np.full(len(flat), np.nan)
    normal_h = np.full(len(flat), np.nan)
    ok = rho >= 3 * field.h
    if np.any(ok):
        H = hessian_matrix(field, flat[ok])
        normal_h[ok] = rho[ok] * np.einsum("ni,nij,nj->n", normal[ok], H, normal[ok])
        # the top eigenvalue is the O(1/rho) tangential curvature; at 3h the cross
        # stencil reaches within h/4 of the boundary and the O(1/rho^2) normal
        # curvature's truncation error swamps it, so the bound starts at 4h
        top = np.linalg.eigvalsh(H)[:, -1]
        resolved = rho[ok] >= HESSIAN_BOUND_BAND * field.h
        hess_max[np.flatnonzero(ok)[resolved]] = top[resolved]
    # |grad phi0| on the boundary, read off the innermost probes
    inner = np.argmin(distances)
    gnorm = np.linalg.norm(field.grad_phi0(grid_pts[inner]), axis=1)
    return BoundaryProfile(
        distances=distances,
        normal_products=prod.reshape(n_d, n_a),
        hessian_bounds=hess_max.reshape(n_d, n_a),
        normal_hessian_products=normal_h.reshape(n_d, n_a),
        gradient_norm_range=(float(gnorm.min()), float(gnorm.max())),
        points=grid_pts,
    )
