"""Finite-difference Dirichlet eigenpairs of -Laplacian + V.

The operator is the (2d+1)-point stencil on a uniform grid whose interior
nodes are the grid points strictly inside the domain.  Two boundary
treatments are available:

``"cut-arm"`` (default)
    An arm that leaves the domain is cut at the boundary crossing, found by
    bisection at distance ``theta h``, and the zero Dirichlet value is
    imposed there: the arm contributes ``1 / (theta h^2)`` to the diagonal
    while interior couplings stay ``-1/h^2``.  This is the symmetric
    discretisation of Gibou, Fedkiw, Cheng and Kang (J. Comput. Phys. 176,
    2002); eigenvalues converge at second order and ``grad log phi0`` stays
    accurate close to curved boundaries.
``"staircase"``
    Neighbours outside the domain are Dirichlet zeros at their lattice
    position.  The effective boundary moves outward by up to ``h``,
    giving an ``O(h)`` eigenvalue error and an ``O(h / rho^2)`` error in
    ``grad log phi0`` at distance ``rho`` from a curved boundary.

On boundaries through lattice points (intervals, aligned rectangles) the two
coincide.  The two lowest eigenpairs come from block inverse iteration with
a fixed shift and Rayleigh-Ritz projection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .domain import ConvexDomain, Interval
from .potential import Potential, Zero
from .report import VerificationReport


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform node lattice ``origin + h * index`` covering the domain's bounding box."""

    origin: np.ndarray
    h: float
    shape: tuple
    mask: np.ndarray = field(repr=False)
    index: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, domain: ConvexDomain, h: float) -> "Grid":
        if not h > 0:
            raise ValueError("grid spacing h must be positive")
        if domain.dim == 1:
            # nodes must hit the endpoints, so h is rounded to divide D
            n_cells = max(2, int(round(domain.D / h)))
            h = domain.D / n_cells
            origin = np.array([-0.5 * domain.D])
            shape = (n_cells + 1,)
        else:
            lo, hi = domain.bounds
            n_cells = np.ceil((hi - lo) / h - 1e-9).astype(int)
            origin = 0.5 * (lo + hi) - 0.5 * h * n_cells
            shape = tuple(int(n) + 1 for n in n_cells)
        axes = [origin[i] + h * np.arange(shape[i]) for i in range(len(shape))]
        coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(shape))
        rho, _, _ = domain._geometry(coords)
        mask = (rho > 1e-9 * h).reshape(shape)
        if mask.sum() < 9:
            raise ValueError(f"grid h={h} leaves only {int(mask.sum())} interior nodes (need >= 9)")
        index = np.full(shape, -1, dtype=np.int64)
        index[mask] = np.arange(int(mask.sum()))
        return cls(origin=origin, h=float(h), shape=shape, mask=mask, index=index)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    def node_coords(self, multi_index) -> np.ndarray:
        return self.origin + self.h * np.asarray(multi_index, dtype=float)

    @property
    def nodes(self) -> np.ndarray:
        """Coordinates of the interior nodes in linear-index order."""
        return self.node_coords(np.argwhere(self.mask))

    def full(self, values, fill=0.0) -> np.ndarray:
        """Scatter interior-node values onto the whole lattice."""
        out = np.full(self.shape, fill, dtype=float)
        out[self.mask] = values
        return out


BOUNDARY_SCHEMES = ("cut-arm", "staircase")


@dataclass(frozen=True, eq=False)
class SchrodingerOperator:
    matrix: sp.csr_matrix
    grid: Grid
    domain: ConvexDomain
    potential: Potential
    v_nodes: np.ndarray
    boundary: str = "cut-arm"


def _arm_lengths(domain: ConvexDomain, grid: Grid, axis: int, step: int, neighbour: np.ndarray,
                 iterations: int = 60) -> np.ndarray:
    """Distance (in units of h) from each interior node to the boundary along
    ``step * e_axis``; 1 where the neighbour is interior or lies on the boundary."""
    theta = np.ones(len(neighbour))
    cut = np.flatnonzero(neighbour < 0)
    if cut.size == 0:
        return theta
    start = grid.nodes[cut]
    e = np.zeros(grid.dim)
    e[axis] = step
    rho_next = domain._geometry(start + grid.h * e)[0]
    cut = cut[np.abs(rho_next) > 1e-9 * grid.h]
    start = grid.nodes[cut]
    lo = np.zeros(cut.size)
    hi = np.ones(cut.size)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        inside = domain.contains(start + (grid.h * mid)[:, None] * e)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    theta[cut] = 0.5 * (lo + hi)
    return theta


def assemble(domain: ConvexDomain, V: Potential | None, h: float,
             boundary: str = "cut-arm") -> SchrodingerOperator:
    """Sparse symmetric matrix of -Laplacian + V with Dirichlet boundary values."""
    if boundary not in BOUNDARY_SCHEMES:
        raise ValueError(f"unknown boundary scheme {boundary!r}; choose from {BOUNDARY_SCHEMES}")
    V = V if V is not None else Zero()
    grid = Grid.build(domain, h)
    n_labels = ndimage.label(grid.mask)[1]
    if n_labels != 1:
        raise ValueError(f"interior mask has {n_labels} components; refine h")
    h = grid.h
    n = grid.n_interior
    ids = np.arange(n)
    multi = np.argwhere(grid.mask)
    v_nodes = np.asarray(V(grid.nodes), dtype=float)
    diag = v_nodes.copy()
    rows, cols, vals = [], [], []
    for axis in range(grid.dim):
        for step in (1, -1):
            j = multi.copy()
            j[:, axis] += step
            inside = (j[:, axis] >= 0) & (j[:, axis] < grid.shape[axis])
            nb = np.full(n, -1, dtype=np.int64)
            nb[inside] = grid.index[tuple(j[inside].T)]
            if boundary == "cut-arm":
                diag += 1.0 / (_arm_lengths(domain, grid, axis, step, nb) * h**2)
            else:
                diag += 1.0 / h**2
            ok = nb >= 0
            rows.append(ids[ok])
            cols.append(nb[ok])
            vals.append(np.full(int(ok.sum()), -1.0 / h**2))
    matrix = sp.csr_matrix(
        (np.concatenate(vals + [diag]), (np.concatenate(rows + [ids]), np.concatenate(cols + [ids]))),
        shape=(n, n))
    return SchrodingerOperator(matrix=matrix, grid=grid, domain=domain, potential=V, v_nodes=v_nodes,
                               boundary=boundary)


@dataclass(frozen=True, eq=False)
class GroundState:
    """Two lowest discrete eigenpairs; ``phi0 > 0`` with max-norm 1."""

    grid: Grid
    lambda0: float
    lambda1: float
    phi0: np.ndarray = field(repr=False)
    phi1: np.ndarray = field(repr=False)
    residual0: float = 0.0
    residual1: float = 0.0
    iterations: int = 0
    domain: ConvexDomain | None = None
    potential: Potential | None = None
    boundary: str = "cut-arm"

    @property
    def gap(self) -> float:
        return self.lambda1 - self.lambda0

    @property
    def h(self) -> float:
        return self.grid.h


def _relative_residual(A, lam, vec):
    return float(np.max(np.abs(A @ vec - lam * vec)) / np.max(np.abs(vec)))


def lowest_eigenpairs(op: SchrodingerOperator, k: int = 2, tol: float = 1e-10,
                      residual_tol: float = 1e-8, max_iter: int = 500,
                      block: int | None = None) -> GroundState:
    """Shifted block inverse iteration for the ``k`` smallest eigenpairs.

    The shift is ``min V`` over the nodes, which keeps ``A - shift*I``
    positive definite; it is factorised once.  Each sweep solves with the
    factor, re-orthonormalises and rotates the block onto its Ritz vectors,
    which deflates converged directions from the higher ones.  Iteration
    stops when the leading ``k`` Ritz values move by less than
    ``tol * max(1, |lambda|)``, the ground-state residual
    ``||(A - lambda0) phi0||_inf / ||phi0||_inf`` is below ``residual_tol``
    and the excited-state residual is below ``100 * residual_tol``.
    """
    if k != 2:
        raise ValueError("only k=2 (ground state and first excited state) is supported")
    A = op.matrix
    n = A.shape[0]
    p = min(n, block or k + 4)
    shift = float(np.min(op.v_nodes))
    lu = spla.splu((A - shift * sp.identity(n, format="csr")).tocsc())

    rng = np.random.default_rng(20240611)
    Q = rng.standard_normal((n, p))
    Q[:, 0] = 1.0
    Q, _ = np.linalg.qr(Q)
    prev = np.full(k, np.inf)
    for it in range(1, max_iter + 1):
        Q, _ = np.linalg.qr(lu.solve(Q))
        T = Q.T @ (A @ Q)
        theta, W = np.linalg.eigh(0.5 * (T + T.T))
        Q = Q @ W
        moved = np.abs(theta[:k] - prev)
        prev = theta[:k].copy()
        if np.all(moved <= tol * np.maximum(1.0, np.abs(theta[:k]))):
            res0 = _relative_residual(A, theta[0], Q[:, 0])
            res1 = _relative_residual(A, theta[1], Q[:, 1])
            if res0 <= residual_tol and res1 <= 100 * residual_tol:
                break
    else:
        raise EigenSolverError(
            f"no convergence after {max_iter} sweeps: eigenvalue change {moved.tolist()}, "
            f"ground-state residual {_relative_residual(A, theta[0], Q[:, 0]):.3e}")

    phi0 = Q[:, 0] * np.sign(Q[:, 0].sum())
    phi0 /= np.max(np.abs(phi0))
    if np.any(phi0 <= 0):
        raise EigenSolverError("ground state is not strictly positive; grid may be disconnected")
    phi1 = Q[:, 1] / Q[np.argmax(np.abs(Q[:, 1])), 1]
    lam0, lam1 = float(theta[0]), float(theta[1])
    return GroundState(
        grid=op.grid, lambda0=lam0, lambda1=lam1, phi0=phi0, phi1=phi1,
        residual0=_relative_residual(A, lam0, phi0), residual1=_relative_residual(A, lam1, phi1),
        iterations=it, domain=op.domain, potential=op.potential, boundary=op.boundary,
    )


def solve(domain: ConvexDomain, V: Potential | None, h: float, boundary: str = "cut-arm",
          **kwargs) -> GroundState:
    return lowest_eigenpairs(assemble(domain, V, h, boundary), **kwargs)


def solve_1d(D: float, Vtilde: Potential | None = None, n: int = 1000) -> GroundState:
    """Dirichlet eigenpairs of -d^2/dz^2 + Vtilde on [-D/2, D/2] with ``n`` interior nodes."""
    if n < 16:
        raise ValueError("solve_1d needs n >= 16 interior nodes")
    return solve(Interval(D), Vtilde, D / (n + 1))


def _shifted(arr, axis, step):
    """arr shifted so that out[i] = arr[i + step] along axis (NaN past the edge)."""
    out = np.full_like(arr, np.nan)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, None), slice(0, -step)
    else:
        src[axis], dst[axis] = slice(0, step), slice(-step, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def central_difference(arr, axis, h):
    return (_shifted(arr, axis, 1) - _shifted(arr, axis, -1)) / (2.0 * h)


# constant in the residual budget C*h, C = RESIDUAL_CONSTANT * lambda0**2
RESIDUAL_CONSTANT = 1.0


def residual_pde_gradient(gs: GroundState, points, constant: float = RESIDUAL_CONSTANT) -> VerificationReport:
    """Residual of Lap(g) + 2 <g, grad g> = grad V for g = grad log phi0.

    Every derivative is a nested central difference of ``log phi0`` on the
    grid, evaluated at the nodes nearest to ``points``.  The check passes
    when the max-norm residual is at most ``C h`` with
    ``C = constant * lambda0**2`` (the natural scale of a third derivative).
    """
    grid, h = gs.grid, gs.h
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if gs.domain is not None and np.any(gs.domain.boundary_distance(pts) < 5 * h - 1e-12):
        raise ValueError("residual sample points must be at least 5h from the boundary")
    with np.errstate(divide="ignore"):
        logphi = np.log(grid.full(gs.phi0, fill=0.0))
    logphi[~grid.mask] = np.nan
    d = grid.dim
    g = [central_difference(logphi, i, h) for i in range(d)]
    idx = np.rint((pts - grid.origin) / h).astype(int)
    sel = tuple(idx[:, i] for i in range(d))
    grad_v = (gs.potential or Zero()).grad(grid.node_coords(idx))
    residual = np.zeros((len(pts), d))
    for i in range(d):
        lap = sum((_shifted(g[i], j, 1) - 2 * g[i] + _shifted(g[i], j, -1)) / h**2 for j in range(d))
        adv = sum(g[j] * central_difference(g[i], j, h) for j in range(d))
        residual[:, i] = (lap + 2 * adv)[sel] - grad_v[:, i]
    worst = float(np.max(np.abs(residual)))
    bound = constant * gs.lambda0**2 * h
    return VerificationReport(
        name="ground_state_gradient_pde_residual",
        margin=bound - worst,
        tolerance=0.0,
        samples=len(pts),
        metadata={"h": h, "C": constant * gs.lambda0**2, "bound": bound},
        details={"max_residual": worst, "residuals": residual},
    )


def analytic_interval_eigenvalue(D: float, k: int) -> float:
    return ((k + 1) * math.pi / D) ** 2
