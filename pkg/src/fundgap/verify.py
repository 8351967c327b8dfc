"""Checks of the gap inequality and of the intermediate estimates behind it.

Every function returns a :class:`VerificationReport`.  Tolerances are
explicit functions of the grid spacing ``h`` and the time step ``dt`` and
are stored in the report metadata together with the seeds used.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .coupling import Outcome, SimConfig, euler_pair, simulate_ensemble
from .domain import ConvexDomain
from .eigensolver import GroundState, solve
from .groundfield import (
    F,
    LogGradientField,
    boundary_normal_product,
    boundary_profile,
    chord_product,
    probe_points,
    psi,
    psi_prime,
    psi_second,
)
from .potential import Potential, Zero, check_convexity_modulus
from .report import VerificationReport, combine

JACKKNIFE_BATCHES = 20


def gap_bound(D: float) -> float:
    return 3.0 * math.pi**2 / D**2


def gap_tolerance(domain: ConvexDomain, gs: GroundState) -> float:
    """Allowed downward discretisation error of the computed gap.

    1D: the three-point stencil lowers ``lambda_k`` by about
    ``lambda_k (k pi h / D)^2 / 12``; ``lambda1 (pi h / D)^2`` bounds the
    gap error with room to spare.  2D: budgeted as ``lambda1 h / D``, the
    ``O(h)`` error of the staircase boundary; the cut-arm scheme is second
    order and stays well inside it.
    """
    D, h = domain.diameter, gs.h
    if domain.dim == 1:
        return gs.lambda1 * (math.pi * h / D) ** 2
    return gs.lambda1 * h / D


def sample_pairs(domain: ConvexDomain, count: int, margin: float, min_separation: float = 0.0,
                 max_separation: float | None = None, rng=None) -> np.ndarray:
    """``(count, 2, dim)`` pairs of interior points with ``rho >= margin`` and the
    requested separation range."""
    rng = np.random.default_rng(rng)
    hi = np.inf if max_separation is None else max_separation
    out = []
    have = 0
    for _ in range(1000):
        if have >= count:
            break
        m = 2 * (count - have) + 16
        if max_separation is None:
            x = domain.sample_interior(margin, m, rng)
            y = domain.sample_interior(margin, m, rng)
        else:
            # local pairs: offset a sampled point by a random short vector
            x = domain.sample_interior(margin, m, rng)
            r = min_separation + (hi - min_separation) * rng.random(m)
            u = rng.standard_normal((m, domain.dim))
            y = x + (r / np.linalg.norm(u, axis=1))[:, None] * u
            ok = domain.contains(y)
            x, y = x[ok], y[ok]
            ok = domain.distance_lower_bound(y) >= margin
            ok[~ok] = domain.distance_and_normal(y[~ok])[0] >= margin
            x, y = x[ok], y[ok]
        sep = np.linalg.norm(x - y, axis=1)
        keep = (sep >= max(min_separation, 1e-12)) & (sep <= hi)
        pairs = np.stack([x[keep], y[keep]], axis=1)
        out.append(pairs)
        have += len(pairs)
    pairs = np.concatenate(out)[:count]
    if len(pairs) < count:
        raise RuntimeError("could not sample the requested pairs")
    return pairs


# -- spectral gap -----------------------------------------------------------

def verify_gap(domain: ConvexDomain, V: Potential | None, h: float,
               groundstate: GroundState | None = None, convexity_pairs: int = 256,
               seed: int = 0, boundary: str = "cut-arm") -> VerificationReport:
    """``lambda1 - lambda0 >= 3 pi^2 / D^2`` for the grid eigenvalues."""
    V = V if V is not None else Zero()
    pairs = sample_pairs(domain, convexity_pairs, 0.0, rng=seed)
    convex = check_convexity_modulus(V, domain, pairs)
    if not convex.passed:
        raise ValueError(f"potential {V.to_spec()} fails the convexity check "
                         f"(margin {convex.margin:.3g})")
    gs = groundstate if groundstate is not None else solve(domain, V, h, boundary=boundary)
    bound = gap_bound(domain.diameter)
    tol = gap_tolerance(domain, gs)
    return VerificationReport(
        name="spectral_gap",
        margin=gs.gap - bound,
        tolerance=tol,
        samples=gs.grid.n_interior,
        metadata={"domain": domain.to_spec(), "potential": V.to_spec(), "h": gs.h,
                  "boundary": gs.boundary, "D": domain.diameter, "tolerance_rule": "lambda1*(pi*h/D)^2 (1D), lambda1*h/D (2D)"},
        details={"lambda0": gs.lambda0, "lambda1": gs.lambda1, "gap": gs.gap, "bound": bound,
                 "ratio": gs.gap / bound, "iterations": gs.iterations,
                 "residual0": gs.residual0, "residual1": gs.residual1},
    )


# -- log-concavity modulus ---------------------------------------------------

def verify_log_concavity_modulus(field: LogGradientField, D: float, pairs,
                                 tolerance: float | None = None,
                                 eta_floor: float = 0.0) -> VerificationReport:
    """``F(x, y) <= 2 psi_D(|x - y|/2)`` over the given pairs.

    ``D`` is a parameter so that a smaller (false) diameter can be used as a
    negative control.  The default tolerance is ``10 h``.
    """
    pairs = np.asarray(pairs, dtype=float)
    x, y = pairs[:, 0], pairs[:, 1]
    h = field.h
    tol = 10.0 * h if tolerance is None else float(tolerance)
    rho = np.minimum(field.domain.boundary_distance(x), field.domain.boundary_distance(y))
    if np.any(rho < 5 * h - 1e-12):
        raise ValueError("pairs must be at distance >= 5h from the boundary")
    sep = np.linalg.norm(x - y, axis=1)
    if np.any(sep < max(eta_floor, 1e-14)):
        raise ValueError("pairs must be separated by at least eta_floor")
    lhs = F(field, x, y)
    # beyond the pole of psi_D (possible only for a too-small D) the bound is -inf
    within = 0.5 * sep < 0.5 * D
    rhs = np.full(len(sep), -np.inf)
    rhs[within] = 2.0 * psi(D, 0.5 * sep[within])
    slack = rhs - lhs
    worst = int(np.argmin(slack))
    return VerificationReport(
        name="log_concavity_modulus",
        margin=float(slack[worst]),
        tolerance=tol,
        samples=len(pairs),
        metadata={"D": D, "h": h, "tolerance_rule": "10*h" if tolerance is None else "given"},
        details={"violations": int(np.sum(slack < -tol)), "worst_pair": pairs[worst],
                 "worst_F": float(lhs[worst]), "worst_rhs": float(rhs[worst])},
    )


# -- rate fitting ------------------------------------------------------------

def _loglinear_rate(times, values):
    """Least-squares slope of ``-log(values)`` against ``times`` (positive values only)."""
    ok = values > 0
    if ok.sum() < 2:
        return np.nan
    slope = np.polyfit(times[ok], np.log(values[ok]), 1)[0]
    return -float(slope)


def jackknife_rate(times, samples, select=None, batches: int = JACKKNIFE_BATCHES):
    """Decay rate of the mean of ``samples`` (trajectories x times) and its
    delete-one-batch jackknife standard error.

    ``select`` restricts the fit to a boolean subset of times, chosen once
    from the full sample so all replicates fit the same points.
    """
    samples = np.asarray(samples, dtype=float)
    times = np.asarray(times, dtype=float)
    mask = np.ones(len(times), dtype=bool) if select is None else np.asarray(select)
    n = len(samples)
    b = min(batches, n)
    groups = np.array_split(np.arange(n), b)
    total = samples.sum(axis=0)
    full = _loglinear_rate(times[mask], (total / n)[mask])
    reps = []
    for g in groups:
        rest = (total - samples[g].sum(axis=0)) / (n - len(g))
        reps.append(_loglinear_rate(times[mask], rest[mask]))
    reps = np.array(reps)
    se = float(np.sqrt((b - 1) / b * np.sum((reps - reps.mean()) ** 2)))
    return full, se


# -- contraction ---------------------------------------------------------------

def verify_contraction(field: LogGradientField, x0, y0, config: SimConfig,
                       ensemble=None, z_score: float = 3.0) -> VerificationReport:
    """``E sin(pi xi_t / D) <= exp(-3 pi^2 t / D^2) sin(pi xi_0 / D)`` on the record grid.

    Stopped trajectories keep their last value (coupled ones contribute 0).
    The decay rate of the Monte Carlo mean is fitted by log-linear least
    squares with a jackknife standard error; ``rate >= 3 pi^2/D^2 - z*se``
    is the second part of the check.
    """
    D = field.domain.diameter
    ens = ensemble if ensemble is not None else simulate_ensemble(x0, y0, field, config)
    s = np.sin(np.pi * ens.xi / D)
    n = len(s)
    mean = s.mean(axis=0)
    se = s.std(axis=0, ddof=1) / math.sqrt(n)
    t = ens.times
    bound = np.exp(-gap_bound(D) * t) * s[:, 0].mean()
    slack = bound + z_score * se - mean
    # t = 0 holds with equality and is not part of the minimum
    later = t > 0
    pointwise = VerificationReport(
        name="contraction_pointwise", margin=float(slack[later].min()), tolerance=0.0, samples=n,
        metadata={"z": z_score},
        details={"times": t, "mean": mean, "stderr": se, "bound": bound,
                 "initial_difference": float(bound[0] - mean[0]),
                 "worst_time": float(t[later][int(np.argmin(slack[later]))])})
    select = mean > z_score * se
    select[0] = True
    rate, rate_se = jackknife_rate(t, s, select)
    target = gap_bound(D)
    fitted = VerificationReport(
        name="contraction_rate", margin=rate + z_score * rate_se - target, tolerance=0.0,
        samples=n, metadata={"z": z_score, "jackknife_batches": JACKKNIFE_BATCHES},
        details={"rate": rate, "rate_stderr": rate_se, "bound_rate": target,
                 "rate_minus_bound": rate - target, "fit_points": int(select.sum())})
    report = combine("contraction", [pointwise, fitted], samples=n,
                     D=D, h=field.h, sim=config.to_dict(), x0=np.ravel(x0), y0=np.ravel(y0))
    report.details.update({
        "rate": rate, "rate_stderr": rate_se, "bound_rate": target,
        "coupled_fraction": ens.fraction(Outcome.COUPLED),
        "boundary_fraction": ens.fraction(Outcome.BOUNDARY),
        "retries": ens.retries, "exhausted": ens.exhausted})
    return report


# -- gap from the coupling -------------------------------------------------------

def default_gap_pairs(field: LogGradientField, spread: float | None = None, count: int = 1):
    """Start pairs ``c +- s u`` through the ground-state peak ``c`` along the
    gradient ``u`` of ``phi1/phi0`` there."""
    gs = field.groundstate
    nodes = gs.grid.nodes
    c = nodes[int(np.argmax(gs.phi0))]
    h = field.h
    eps = 2 * h
    grad = np.array([(field.ratio_batch((c + eps * e)[None])[0] - field.ratio_batch((c - eps * e)[None])[0])
                     / (2 * eps) for e in np.eye(field.dim)])
    norm = np.linalg.norm(grad)
    if not norm > 0:
        raise ValueError("phi1/phi0 has no gradient at the ground-state peak")
    u = grad / norm
    rho_c = field.domain.boundary_distance(c)
    s0 = 0.3 * rho_c if spread is None else spread
    pairs = [np.stack([c + s * u, c - s * u]) for s in s0 * np.linspace(1.0, 0.5, count)]
    return np.stack(pairs)


def estimate_gap_from_coupling(field: LogGradientField, config: SimConfig, pairs=None,
                               phi1=None, z_score: float = 3.0) -> VerificationReport:
    """Decay rate of ``E v0(X_t) - E v0(Y_t)`` for ``v0 = phi1/phi0``.

    For the exact diffusion ``E v0(X_t) = exp(-(lambda1 - lambda0) t) v0(x)``,
    so the fitted rate estimates the gap; the check is
    ``rate >= 3 pi^2/D^2 - z*se``.  The rate of the pair with the smallest
    estimate is used.  ``phi1`` replaces the stored excited state when given.
    """
    gs = field.groundstate
    if phi1 is not None:
        field = LogGradientField(dataclasses.replace(gs, phi1=np.asarray(phi1, dtype=float)),
                                 field.clamp_radius)
        gs = field.groundstate
    v_nodes = gs.phi1 / gs.phi0
    if np.ptp(v_nodes) <= 1e-8 * np.max(np.abs(v_nodes)):
        raise ValueError("v0 = phi1/phi0 is constant; no gap can be estimated")
    pairs = default_gap_pairs(field) if pairs is None else np.asarray(pairs, dtype=float)
    D = field.domain.diameter
    target = gap_bound(D)
    rates, ses, per_pair = [], [], []
    for p, (x0, y0) in enumerate(pairs):
        cfg = config.replace(seed=int(config.seed) + p)
        ens = simulate_ensemble(x0, y0, field, cfg, record_positions=True)
        n, n_rec, dim = ens.X.shape
        vx = field.ratio_batch(ens.X.reshape(-1, dim)).reshape(n, n_rec)
        vy = field.ratio_batch(ens.Y.reshape(-1, dim)).reshape(n, n_rec)
        diff = (vx - vy) * np.sign(vx[0, 0] - vy[0, 0])
        mean = diff.mean(axis=0)
        se = diff.std(axis=0, ddof=1) / math.sqrt(n)
        select = mean > z_score * se
        select[0] = True
        rate, rate_se = jackknife_rate(ens.times, diff, select)
        rates.append(rate)
        ses.append(rate_se)
        per_pair.append({"x0": x0, "y0": y0, "rate": rate, "rate_stderr": rate_se,
                         "fit_points": int(select.sum()),
                         "coupled_fraction": ens.fraction(Outcome.COUPLED),
                         "boundary_fraction": ens.fraction(Outcome.BOUNDARY)})
    worst = int(np.nanargmin(rates))
    rate, rate_se = rates[worst], ses[worst]
    return VerificationReport(
        name="gap_from_coupling",
        margin=rate + z_score * rate_se - target,
        tolerance=0.0,
        samples=int(config.n_traj) * len(pairs),
        metadata={"D": D, "h": field.h, "sim": config.to_dict(), "z": z_score},
        details={"rate": rate, "rate_stderr": rate_se, "bound_rate": target,
                 "eigensolver_gap": gs.gap, "relative_to_eigensolver": rate / gs.gap - 1.0,
                 "pairs": per_pair})


# -- boundary behaviour ------------------------------------------------------------

def default_probe_distances(field: LogGradientField) -> np.ndarray:
    """Probe distances ``h * (32, 24, ..., 3, 2)`` below half the inradius."""
    mult = np.array([32, 24, 16, 12, 8, 6, 5, 4, 3, 2], dtype=float)
    d = mult * field.h
    d = d[d < 0.5 * field.domain.inradius]
    if len(d) < 3:
        raise ValueError("grid too coarse for a boundary probe sweep")
    return d


def _inner_band(distances, h):
    """The innermost valid band: probes with ``3h <= rho <= 6h``."""
    return (distances >= 3 * h - 1e-12) & (distances <= 6 * h + 1e-12)


def verify_drift_condition(field: LogGradientField, distances=None, count: int = 16,
                           threshold: float = 1.5) -> VerificationReport:
    """``rho <b, grad rho>`` with ``b = 2 grad log phi0`` (boundary asymptote included).

    Passes when every probe in the innermost band exceeds ``threshold``; the
    limit of the exact drift is 2.
    """
    d = default_probe_distances(field) if distances is None else np.sort(np.asarray(distances))[::-1]
    pts = probe_points(field.domain, d, count)
    _, prod = boundary_normal_product(field, pts.reshape(-1, field.dim), raw=False)
    prod = 2.0 * prod.reshape(len(d), -1)
    inner = d <= 6 * field.h + 1e-12
    worst = float(prod[inner].min())
    return VerificationReport(
        name="drift_condition", margin=worst - threshold, tolerance=0.0, samples=prod.size,
        metadata={"h": field.h, "clamp_radius": field.clamp_radius, "threshold": threshold,
                  "band": "rho <= 6h"},
        details={"distances": d, "mean_by_distance": prod.mean(axis=1),
                 "min_by_distance": prod.min(axis=1), "limit": 2.0})


def verify_boundary_asymptotics(field: LogGradientField, distances=None, count: int = 16,
                                 window: float = 0.15) -> VerificationReport:
    """Near-boundary behaviour of the ground state.

    Asserted: on the innermost valid band (``3h <= rho <= 6h``, raw grid
    values) ``|rho <grad log phi0, grad rho> - 1| <= window``; the doubled
    drift condition; ``rho * d^2_N log phi0 < 0`` at every probe with
    ``rho >= 3h``.  Reported only: the fitted ``C1`` (largest value of
    ``rho * lambda_max(Hessian)``), the Hessian upper bound ``K1`` over the
    sweep and the range of ``|grad phi0|`` next to the boundary.
    """
    d = default_probe_distances(field) if distances is None else np.asarray(distances, dtype=float)
    prof = boundary_profile(field, d, count)
    d = prof.distances
    band = _inner_band(d, field.h)
    vals = prof.normal_products[band]
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise ValueError("no valid raw probes in the innermost band")
    dev = float(np.max(np.abs(vals - 1.0)))
    normal = VerificationReport(
        name="boundary_normal_product", margin=window - dev, tolerance=0.0, samples=vals.size,
        metadata={"window": window, "band": "3h <= rho <= 6h"},
        details={"distances": d, "mean_by_distance": np.nanmean(prof.normal_products, axis=1),
                 "max_deviation": dev})
    nh = prof.normal_hessian_products[np.isfinite(prof.normal_hessian_products)]
    hess = VerificationReport(
        name="boundary_normal_hessian", margin=float(-nh.max()), tolerance=0.0, samples=nh.size,
        details={"max_rho_times_normal_second_derivative": float(nh.max())})
    drift = verify_drift_condition(field, d, count)
    report = combine("boundary_asymptotics", [normal, drift, hess], h=field.h, count=count)
    hb = prof.hessian_bounds
    node_h = field._node_hessian()[field.grid.mask]
    node_h = node_h[np.all(np.isfinite(node_h.reshape(len(node_h), -1)), axis=1)]
    report.details.update({
        "C1_estimate": float(-np.nanmax(hb * d[:, None])),
        "K1_estimate": float(max(np.nanmax(hb), np.linalg.eigvalsh(node_h)[:, -1].max())),
        "theta_range": list(prof.gradient_norm_range),
        "normal_products_by_distance": np.nanmean(prof.normal_products, axis=1),
        "distances": d})
    return report


def boundary_divergence_profile(field: LogGradientField, y=None, distances=None,
                                count: int = 8, eta1: float | None = None,
                                near_pairs: int = 4000, near_tolerance: float | None = None,
                                seed: int = 0) -> VerificationReport:
    """``F(x, y)`` for ``x`` approaching the boundary with ``y`` fixed.

    The fitted slope of ``F`` against ``log(1/rho(x))`` over
    ``rho in [3h, 0.1]`` (probes with ``|x - y| > eta1``) must be negative.
    The complementary near-diagonal scan reports ``eps = max F`` over
    interior pairs with ``|x - y| <= eta1`` and requires ``eps <= 10 h``.
    """
    domain = field.domain
    h = field.h
    D = domain.diameter
    eta1 = 0.05 * D if eta1 is None else eta1
    y = np.asarray(domain.center if y is None else y, dtype=float)
    if distances is None:
        upper = min(0.1, 0.5 * domain.inradius)
        distances = np.geomspace(upper, 3 * h, 12)
    distances = np.asarray(distances, dtype=float)
    pts = probe_points(domain, distances, count)
    n_d, n_a, dim = pts.shape
    xs = pts.reshape(-1, dim)
    ys = np.broadcast_to(y, xs.shape)
    far = np.linalg.norm(xs - ys, axis=1) > eta1
    vals = np.full(len(xs), np.nan)
    vals[far] = F(field, xs[far], ys[far])
    vals = vals.reshape(n_d, n_a)
    logs = np.log(1.0 / distances)
    slopes = []
    for a in range(n_a):
        ok = np.isfinite(vals[:, a])
        if ok.sum() >= 3:
            slopes.append(np.polyfit(logs[ok], vals[ok, a], 1)[0])
    slopes = np.array(slopes)
    divergence = VerificationReport(
        name="boundary_divergence", margin=float(-slopes.max()), tolerance=0.0,
        samples=int(np.isfinite(vals).sum()),
        metadata={"eta1": eta1, "y": y, "rho_range": [float(distances.min()), float(distances.max())]},
        details={"slopes": slopes, "mean_F_by_distance": np.nanmean(vals, axis=1),
                 "distances": distances})
    tol = 10 * h if near_tolerance is None else near_tolerance
    pairs = sample_pairs(domain, near_pairs, 5 * h, 1e-3 * eta1, eta1, rng=seed)
    near = chord_product(field, pairs[:, 0], pairs[:, 1])
    eps = float(near.max())
    diagonal = VerificationReport(
        name="near_diagonal", margin=tol - eps, tolerance=0.0, samples=len(near),
        metadata={"eta1": eta1, "tolerance_rule": "10*h"},
        details={"epsilon": eps, "worst_pair": pairs[int(np.argmax(near))]})
    report = combine("boundary_divergence_profile", [divergence, diagonal], h=h, eta1=eta1)
    report.details.update({"slope_max": float(slopes.max()), "epsilon": eps})
    return report


# -- coupled dynamics ------------------------------------------------------------

def xi_dynamics_check(field: LogGradientField, x, y, dt: float = 1e-5, n: int = 100_000,
                      seed: int = 0, z_score: float = 3.0, var_window: float = 0.05) -> VerificationReport:
    """One Euler step from a frozen state, ``n`` times.

    The increment of ``xi = |X - Y|/2`` must have mean ``F(x, y) dt`` within
    ``z`` standard errors and variance within ``var_window`` (relative) of
    ``2 dt``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    f_xy = F(field, x, y)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    dB = math.sqrt(dt) * rng.standard_normal((n, field.dim))
    g = field.log_gradient_batch(np.stack([x, y]))
    X = np.broadcast_to(x, (n, field.dim))
    Y = np.broadcast_to(y, (n, field.dim))
    Xn, Yn = euler_pair(X, Y, np.broadcast_to(g[0], X.shape), np.broadcast_to(g[1], X.shape), dt, dB)
    inc = 0.5 * np.linalg.norm(Xn - Yn, axis=1) - 0.5 * np.linalg.norm(x - y)
    drift = inc.mean() / dt
    drift_se = inc.std(ddof=1) / math.sqrt(n) / dt
    var = inc.var(ddof=1)
    mean_part = VerificationReport(
        name="xi_drift", margin=z_score * drift_se - abs(drift - f_xy), tolerance=0.0, samples=n,
        details={"drift": drift, "drift_stderr": drift_se, "F": f_xy})
    var_part = VerificationReport(
        name="xi_variance", margin=var_window - abs(var / (2 * dt) - 1.0), tolerance=0.0, samples=n,
        details={"variance": var, "expected": 2 * dt, "ratio": var / (2 * dt)})
    report = combine("xi_dynamics", [mean_part, var_part], samples=n, dt=dt, seed=seed, x=x, y=y)
    report.details.update({"drift": drift, "drift_stderr": drift_se, "F": f_xy,
                           "variance_ratio": var / (2 * dt)})
    return report


def _compensated(ens, D1, column=0):
    """``G = [F - 2 psi_D1(xi)] exp(int 2 psi'_D1(xi))`` on the record grid,
    frozen at the (pre-collapse) stopping values."""
    stopped = ens.times[None, :] >= ens.final_time[:, None] - 1e-12
    stopped &= (ens.outcome != Outcome.HORIZON)[:, None]
    xi = np.where(stopped, ens.stop_xi[:, None], ens.xi)
    Fv = np.where(stopped, ens.stop_F[:, None], ens.F)
    I = np.where(stopped, ens.stop_integral[:, None, column], ens.integral[..., column])
    return (Fv - 2.0 * psi(D1, xi)) * np.exp(I)


def supermartingale_check(field: LogGradientField, x0, y0, config: SimConfig,
                          D1_factor: float = 1.05, sensitivity_factor: float = 1.01,
                          z_score: float = 3.0) -> VerificationReport:
    """Nonnegative drift of the compensated process ``G``.

    ``G`` can only decrease through its martingale part, so the ensemble mean
    of ``G_T - G_0`` (each trajectory frozen when it stops) must be at least
    ``-z`` standard errors.  Per-window increments are reported.  The same
    statistic with ``D1 = sensitivity_factor * D`` is reported, not asserted.
    """
    D = field.domain.diameter
    factors = {"main": D1_factor, "sensitivity": sensitivity_factor}
    D1s = [f * D for f in factors.values()]
    acc = lambda xi: np.stack([2.0 * psi_prime(d1, np.minimum(xi, 0.5 * D)) for d1 in D1s], axis=-1)
    ens = simulate_ensemble(x0, y0, field, config, accumulate=acc)
    out = {}
    for j, (label, factor) in enumerate(factors.items()):
        D1 = factor * D
        G = _compensated(ens, D1, j)
        total = G[:, -1] - G[:, 0]
        inc = np.diff(G, axis=1)
        n = len(G)
        win_mean = inc.mean(axis=0)
        win_se = inc.std(axis=0, ddof=1) / math.sqrt(n)
        out[label] = {
            "D1": D1, "mean_increment": float(total.mean()),
            "stderr": float(total.std(ddof=1) / math.sqrt(n)),
            "window_z_min": float(np.min(win_mean / np.where(win_se > 0, win_se, np.inf))),
            "G0": float(G[0, 0]),
        }
    out["coupled_fraction"] = ens.fraction(Outcome.COUPLED)
    out["boundary_fraction"] = ens.fraction(Outcome.BOUNDARY)
    main = out["main"]
    return VerificationReport(
        name="compensated_submartingale_drift",
        margin=main["mean_increment"] + z_score * main["stderr"],
        tolerance=0.0,
        samples=int(config.n_traj),
        metadata={"D": D, "h": field.h, "sim": config.to_dict(), "z": z_score,
                  "D1_factor": D1_factor, "sensitivity_factor": sensitivity_factor},
        details=out)


# -- one dimensional identities ------------------------------------------------------

def psi_identity_check(D: float, n: int = 10_001, upper: float = 0.45,
                       tolerance: float = 1e-12) -> VerificationReport:
    """``|psi'' + 2 psi psi'|`` on ``[0, upper * D]``."""
    z = np.linspace(0.0, upper * D, n)
    res = np.abs(psi_second(D, z) + 2.0 * psi(D, z) * psi_prime(D, z))
    return VerificationReport(
        name="psi_identity", margin=tolerance - float(res.max()), tolerance=0.0, samples=n,
        metadata={"D": D, "upper": upper, "bound": tolerance},
        details={"max_residual": float(res.max()), "argmax": float(z[int(np.argmax(res))])})


def sin_lower_bound_check(D: float, n: int = 100_001) -> VerificationReport:
    """``sin(pi z / D) >= 2 z / D`` on a dense grid of ``[0, D/2]``."""
    z = np.linspace(0.0, 0.5 * D, n)
    gap = np.sin(np.pi * z / D) - 2.0 * z / D
    return VerificationReport(
        name="sin_lower_bound", margin=float(gap.min()), tolerance=1e-15, samples=n,
        metadata={"D": D})
