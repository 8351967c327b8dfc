"""Reflection-coupled Euler-Maruyama simulation of the pair (X, Y).

Both processes follow ``dZ = sqrt(2) dB + 2 grad log phi0(Z) dt``; ``Y`` is
driven by the reflected noise ``M(X, Y) dB`` with
``M = I - 2 e e^T``, ``e = (X - Y)/|X - Y|``.  A trajectory stops when
``|X - Y| <= eta`` (coupled; afterwards ``Y = X`` and ``xi = 0``), when
``min(rho(X), rho(Y)) <= delta`` (boundary) or at the horizon.

Random numbers
--------------
Trajectories are grouped in fixed blocks of ``BLOCK_SIZE``.  Block ``b``
owns a Philox stream keyed by ``(seed, b)`` and every step draws normals
for the whole block, stopped trajectories included, so the noise of
trajectory ``i`` depends only on ``(seed, i)``.  The rare step refinements
after an exit from the domain draw from a stream keyed by
``(seed, i, step)``.  Results are therefore independent of how blocks are
spread over worker processes.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

BLOCK_SIZE = 256
_RETRY_TAG = 7919


class Outcome(enum.IntEnum):
    HORIZON = 0
    COUPLED = 1
    BOUNDARY = 2


@dataclass(frozen=True)
class SimConfig:
    """Time stepping and stopping parameters.

    ``eta`` must be at least ``4 sqrt(2 dt)``: the separation moves by about
    ``2 sqrt(2 dt)`` per step, so a smaller threshold is jumped over.
    """

    dt: float = 1e-5
    eta: float = 0.02
    delta: float = 1e-3
    horizon: float = 0.2
    n_traj: int = 1000
    seed: int = 0
    record_stride: int = 100
    max_retries: int = 10

    def __post_init__(self):
        for name in ("dt", "eta", "delta", "horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        for name in ("n_traj", "record_stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.eta < 4.0 * math.sqrt(2.0 * self.dt) * (1 - 1e-12):
            raise ValueError(
                f"eta={self.eta} is below 4*sqrt(2*dt)={4 * math.sqrt(2 * self.dt):.4g}; "
                "coupling would be missed between steps")

    @property
    def safety_factor(self) -> float:
        """``eta / sqrt(2 dt)``; at least 4 by construction."""
        return self.eta / math.sqrt(2.0 * self.dt)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def replace(self, **changes) -> "SimConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SimConfig(**values)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["safety_factor"] = self.safety_factor
        return d


@dataclass
class CouplingTrajectory:
    times: np.ndarray
    xi: np.ndarray
    F: np.ndarray
    outcome: Outcome
    final_time: float
    X: np.ndarray | None = None
    Y: np.ndarray | None = None


@dataclass
class CouplingEnsemble:
    """Records of many trajectories on the common time grid ``times``.

    After a trajectory stops its records are frozen (coupled ones at
    ``xi = F = 0``).  ``stop_xi``, ``stop_F`` and ``stop_integral`` hold the
    values at the stopping step before the coupled pair is collapsed.
    ``integral`` is the running left-point sum of ``accumulate(xi) dt``.
    """

    config: SimConfig
    times: np.ndarray
    xi: np.ndarray
    F: np.ndarray
    outcome: np.ndarray
    final_time: np.ndarray
    stop_xi: np.ndarray
    stop_F: np.ndarray
    integral: np.ndarray | None = None
    stop_integral: np.ndarray | None = None
    X: np.ndarray | None = None
    Y: np.ndarray | None = None
    retries: int = 0
    exhausted: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return len(self.outcome)

    def fraction(self, outcome: Outcome) -> float:
        return float(np.mean(self.outcome == outcome))

    def trajectory(self, i: int) -> CouplingTrajectory:
        return CouplingTrajectory(
            times=self.times, xi=self.xi[i], F=self.F[i], outcome=Outcome(int(self.outcome[i])),
            final_time=float(self.final_time[i]),
            X=None if self.X is None else self.X[i], Y=None if self.Y is None else self.Y[i])


def reflection_matrix(x, y) -> np.ndarray:
    """``I - 2 e e^T`` for ``e = (x - y)/|x - y|``."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    dist = np.linalg.norm(diff)
    if dist < 1e-14:
        raise ValueError("reflection matrix is undefined for coincident points")
    e = diff / dist
    return np.eye(len(e)) - 2.0 * np.outer(e, e)


def _reflect(diff, dB):
    """Rows of ``M dB`` with ``M`` built from the rows of ``diff``."""
    dist = np.linalg.norm(diff, axis=1)
    e = diff / np.where(dist > 0, dist, 1.0)[:, None]
    return dB - 2.0 * np.einsum("ij,ij->i", e, dB)[:, None] * e


def euler_pair(X, Y, gX, gY, dt, dB):
    """One batched Euler step given the (undoubled) log-gradients at X and Y."""
    Xn = X + math.sqrt(2.0) * dB + 2.0 * dt * gX
    Yn = Y + math.sqrt(2.0) * _reflect(X - Y, dB) + 2.0 * dt * gY
    return Xn, Yn


def step_pair(state, field, dt, dB, rng=None, max_retries: int = 0):
    """Advance one pair by ``dt`` with increment ``dB`` (variance ``dt`` per coordinate).

    If either end point leaves the domain the step is redone as two half
    steps whose increments are drawn from the Brownian bridge with the same
    total ``dB``, recursively up to ``max_retries`` halvings.

    Returns
    -------
    (X, Y, ok) : the new points, unchanged points with ``ok=False`` when the
    retry budget ran out.
    """
    x, y = (np.asarray(v, dtype=float) for v in state)
    if np.linalg.norm(x - y) < 1e-14:
        raise ValueError("step_pair needs distinct points")
    return _refine(x, y, field, float(dt), np.asarray(dB, dtype=float), rng, max_retries)


def _refine(x, y, field, dt, dB, rng, depth):
    g = field.log_gradient_batch(np.stack([x, y]))
    xn, yn = euler_pair(x[None], y[None], g[:1], g[1:], dt, dB[None])
    if field.domain.contains(np.concatenate([xn, yn])).all():
        return xn[0], yn[0], True
    if depth <= 0 or rng is None:
        return x, y, False
    half = 0.5 * dB + math.sqrt(0.25 * dt) * rng.standard_normal(dB.shape)
    xm, ym, ok = _refine(x, y, field, 0.5 * dt, half, rng, depth - 1)
    if not ok:
        return x, y, False
    if np.linalg.norm(xm - ym) < 1e-14:
        return xm, ym, True
    xe, ye, ok = _refine(xm, ym, field, 0.5 * dt, dB - half, rng, depth - 1)
    return (xe, ye, True) if ok else (x, y, False)


def block_generators(seed: int, first_block: int, n_blocks: int):
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(b,))))
            for b in range(first_block, first_block + n_blocks)]


def _retry_generator(seed: int, index: int, step: int):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(_RETRY_TAG, index, step))))


def _simulate_range(args):
    x0, y0, field, config, accumulate, record_positions, lo, hi = args
    return _simulate_block(x0[lo:hi], y0[lo:hi], field, config, accumulate, record_positions, lo)


def _as_starts(x0, n, dim):
    arr = np.asarray(x0, dtype=float)
    if arr.ndim == 1:
        arr = np.broadcast_to(arr, (n, dim))
    if arr.shape != (n, dim):
        raise ValueError(f"start points must have shape ({dim},) or ({n}, {dim})")
    return np.array(arr)


def simulate_ensemble(x0, y0, field, config: SimConfig, accumulate=None,
                      record_positions: bool = False, workers: int | None = None) -> CouplingEnsemble:
    """Simulate ``config.n_traj`` coupled pairs.

    Parameters
    ----------
    x0, y0 : array_like
        A common start pair ``(dim,)`` or one start per trajectory ``(n, dim)``.
    field : LogGradientField
        Supplies ``log_gradient_batch`` and the domain.
    accumulate : callable, optional
        ``f(xi) -> array`` of shape ``(len(xi),)`` or ``(len(xi), k)``; its
        left-point time integral is recorded.
    record_positions : bool
        Also keep ``X`` and ``Y`` at the record times.
    workers : int, optional
        Worker processes over blocks; defaults to ``FUNDGAP_THREADS`` or 1.
        The result does not depend on it.
    """
    domain = field.domain
    dim = domain.dim
    n = int(config.n_traj)
    x0 = _as_starts(x0, n, dim)
    y0 = _as_starts(y0, n, dim)
    if not (domain.contains(x0).all() and domain.contains(y0).all()):
        raise ValueError("start points must be inside the domain")
    rho0 = np.minimum(domain.distance_and_normal(x0)[0], domain.distance_and_normal(y0)[0])
    if np.any(rho0 < 2 * config.delta):
        raise ValueError("start points must be at distance >= 2*delta from the boundary")

    if workers is None:
        workers = int(os.environ.get("FUNDGAP_THREADS", "1") or 1)
    n_blocks = -(-n // BLOCK_SIZE)
    workers = max(1, min(int(workers), n_blocks))
    if workers == 1:
        parts = [_simulate_block(x0, y0, field, config, accumulate, record_positions, 0)]
    else:
        per = -(-n_blocks // workers)
        cuts = [min(n, k * per * BLOCK_SIZE) for k in range(workers + 1)]
        jobs = [(x0, y0, field, config, accumulate, record_positions, cuts[k], cuts[k + 1])
                for k in range(workers) if cuts[k] < cuts[k + 1]]
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_simulate_range, jobs))
    return _merge(parts, config)


def _merge(parts, config):
    if len(parts) == 1:
        return parts[0]
    cat = lambda name: (None if getattr(parts[0], name) is None
                        else np.concatenate([getattr(p, name) for p in parts]))
    return CouplingEnsemble(
        config=config, times=parts[0].times,
        **{name: cat(name) for name in ("xi", "F", "outcome", "final_time", "stop_xi", "stop_F",
                                         "integral", "stop_integral", "X", "Y")},
        retries=sum(p.retries for p in parts), exhausted=sum(p.exhausted for p in parts),
        meta=parts[0].meta)


def _simulate_block(x0, y0, field, config, accumulate, record_positions, offset):
    """Simulate trajectories ``offset .. offset + len(x0)``; offset is block aligned."""
    domain = field.domain
    n, dim = x0.shape
    dt, sq = config.dt, math.sqrt(config.dt)
    n_steps = config.n_steps
    stride = config.record_stride
    rec_steps = list(range(0, n_steps + 1, stride))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    rec_index = {k: j for j, k in enumerate(rec_steps)}
    n_rec = len(rec_steps)

    first_block = offset // BLOCK_SIZE
    n_blocks = -(-n // BLOCK_SIZE)
    gens = block_generators(config.seed, first_block, n_blocks)
    sizes = [min(BLOCK_SIZE, n - b * BLOCK_SIZE) for b in range(n_blocks)]

    X, Y = x0.copy(), y0.copy()
    xi = 0.5 * np.linalg.norm(X - Y, axis=1)
    Fcur = np.zeros(n)
    extra = () if accumulate is None else np.shape(accumulate(xi[:1]))[1:]
    Icur = np.zeros((n,) + extra) if accumulate is not None else None
    outcome = np.zeros(n, dtype=np.int64)
    final_time = np.full(n, n_steps * dt)
    stop_xi = np.full(n, np.nan)
    stop_F = np.full(n, np.nan)
    stop_I = np.full((n,) + extra, np.nan) if accumulate is not None else None
    active = np.ones(n, dtype=bool)

    xi_rec = np.empty((n, n_rec))
    F_rec = np.empty((n, n_rec))
    I_rec = np.empty((n, n_rec) + extra) if accumulate is not None else None
    X_rec = np.empty((n, n_rec, dim)) if record_positions else None
    Y_rec = np.empty((n, n_rec, dim)) if record_positions else None
    retries = exhausted = 0

    def chord(gx, gy, diff):
        dist = np.linalg.norm(diff, axis=1)
        return np.einsum("ij,ij->i", gx - gy, diff) / np.where(dist > 0, dist, np.inf)

    def stop(idx, kind, t):
        nonlocal active
        outcome[idx] = kind
        final_time[idx] = t
        stop_xi[idx] = xi[idx]
        stop_F[idx] = Fcur[idx]
        if accumulate is not None:
            stop_I[idx] = Icur[idx]
        active[idx] = False
        if kind == Outcome.COUPLED:
            Y[idx] = X[idx]
            xi[idx] = 0.0
            Fcur[idx] = 0.0

    # pairs that start within eta are coupled at t = 0
    g0 = field.log_gradient_batch(np.concatenate([X, Y]))
    Fcur[:] = chord(g0[:n], g0[n:], X - Y)
    start_coupled = np.flatnonzero(2 * xi <= config.eta)
    if start_coupled.size:
        stop(start_coupled, Outcome.COUPLED, 0.0)

    for k in range(n_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size:
            g = field.log_gradient_batch(np.concatenate([X[idx], Y[idx]]))
            gX, gY = g[:idx.size], g[idx.size:]
            Fcur[idx] = chord(gX, gY, X[idx] - Y[idx])
        j = rec_index.get(k)
        if j is not None:
            xi_rec[:, j] = xi
            F_rec[:, j] = Fcur
            if accumulate is not None:
                I_rec[:, j] = Icur
            if record_positions:
                X_rec[:, j] = X
                Y_rec[:, j] = Y
        if k == n_steps:
            break
        if not idx.size:
            # everything has stopped: later records repeat the frozen state
            later = [rec_index[s] for s in rec_steps if s > k]
            xi_rec[:, later] = xi[:, None]
            F_rec[:, later] = Fcur[:, None]
            if accumulate is not None:
                I_rec[:, later] = Icur[:, None]
            if record_positions:
                X_rec[:, later] = X[:, None]
                Y_rec[:, later] = Y[:, None]
            break
        dB = np.concatenate([gen.standard_normal((m, dim)) for gen, m in zip(gens, sizes)]) * sq
        Xa, Ya = X[idx], Y[idx]
        Xn, Yn = euler_pair(Xa, Ya, gX, gY, dt, dB[idx])
        ok = domain.contains(Xn) & domain.contains(Yn)
        for m in np.flatnonzero(~ok):
            i = idx[m]
            retries += 1
            rng = _retry_generator(config.seed, offset + int(i), k)
            xr, yr, good = _refine(Xa[m], Ya[m], field, dt, dB[i], rng, config.max_retries)
            Xn[m], Yn[m] = xr, yr
            if not good:
                exhausted += 1
                ok[m] = False
            else:
                ok[m] = True
        if accumulate is not None:
            Icur[idx] += dt * accumulate(xi[idx])
        X[idx], Y[idx] = Xn, Yn
        xi[idx] = 0.5 * np.linalg.norm(Xn - Yn, axis=1)
        t = (k + 1) * dt

        failed = idx[~ok]
        coupled = idx[ok & (2 * xi[idx] <= config.eta)]
        rest = idx[ok & (2 * xi[idx] > config.eta)]
        hit = rest[np.minimum(domain.distance_lower_bound(X[rest]),
                              domain.distance_lower_bound(Y[rest])) <= config.delta]
        if hit.size:
            exact = np.minimum(domain.distance_and_normal(X[hit])[0],
                               domain.distance_and_normal(Y[hit])[0])
            hit = hit[exact <= config.delta]
        for group in (coupled, hit, failed):
            if group.size:
                g = field.log_gradient_batch(np.concatenate([X[group], Y[group]]))
                Fcur[group] = chord(g[:group.size], g[group.size:], X[group] - Y[group])
        if coupled.size:
            stop(coupled, Outcome.COUPLED, t)
        if hit.size:
            stop(hit, Outcome.BOUNDARY, t)
        if failed.size:
            stop(failed, Outcome.BOUNDARY, k * dt)

    horizon = np.flatnonzero(active)
    if horizon.size:
        stop_xi[horizon] = xi[horizon]
        stop_F[horizon] = Fcur[horizon]
        if accumulate is not None:
            stop_I[horizon] = Icur[horizon]

    return CouplingEnsemble(
        config=config, times=np.array(rec_steps) * dt, xi=xi_rec, F=F_rec, outcome=outcome,
        final_time=final_time, stop_xi=stop_xi, stop_F=stop_F, integral=I_rec,
        stop_integral=stop_I, X=X_rec, Y=Y_rec, retries=retries, exhausted=exhausted,
        meta={"block_size": BLOCK_SIZE, "rng": "Philox per (seed, block)"})


def simulate(x0, y0, field, config: SimConfig, index: int = 0) -> CouplingTrajectory:
    """Trajectory ``index`` of the ensemble defined by ``config``, positions included.

    Only the block containing ``index`` is simulated; the result equals
    ``simulate_ensemble(...).trajectory(index)``.
    """
    if not 0 <= index < config.n_traj:
        raise IndexError("trajectory index out of range")
    block = index // BLOCK_SIZE
    lo = block * BLOCK_SIZE
    hi = min(config.n_traj, lo + BLOCK_SIZE)
    dim = field.domain.dim
    xs = np.broadcast_to(np.asarray(x0, dtype=float), (hi - lo, dim))
    ys = np.broadcast_to(np.asarray(y0, dtype=float), (hi - lo, dim))
    part = _simulate_block(np.array(xs), np.array(ys), field, config, None, True, lo)
    return part.trajectory(index - lo)


def write_raw_paths(ensemble: CouplingEnsemble, path, start: int = 0) -> None:
    """Columnar text: ``traj time xi F outcome`` per record, one trajectory after another."""
    names = [o.name.lower() for o in Outcome]
    with open(path, "w") as fh:
        fh.write("# traj time xi F outcome\n")
        for i in range(ensemble.n_traj):
            label = names[int(ensemble.outcome[i])]
            for t, x, f in zip(ensemble.times, ensemble.xi[i], ensemble.F[i]):
                fh.write(f"{start + i} {t:.17g} {x:.17g} {f:.17g} {label}\n")
