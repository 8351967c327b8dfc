"""Command-line front end.

Usage::

    fundgap <subcommand> CONFIG [--set section.key=value ...] [--out DIR]
            [--format table,structured,raw-paths] [--groundstate FILE]

Subcommands: ``eigensolve``, ``verify-modulus``, ``simulate``,
``contraction``, ``gap-report``, ``boundary``, ``all``.

Outputs (in the output directory):

``groundstate.txt``
    Ground-state artifact (see :mod:`fundgap.artifact`), written by
    ``eigensolve`` and ``all``; ``simulate`` requires it.
``report.json``
    Structured report: ``{"command", "config", "passed", "reports": [...]}``
    where each report has ``name, status, margin, tolerance, samples,
    metadata, details``.  Keys are sorted and no timings are included, so
    identical configs give byte-identical files.
``report.txt``
    The human-readable table, also printed to stdout.
``paths_<block>.txt``
    Raw trajectory records (``traj time xi F outcome``), one file per block
    of trajectories, when ``raw-paths`` is requested.

Exit status: 0 all checks passed, 1 a check failed, 2 usage or
configuration error, 3 solver failure.  ``FUNDGAP_THREADS`` sets the number
of simulation worker processes.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import verify as V
from .artifact import ArtifactError, load_groundstate, save_groundstate
from .config import ConfigError, RunConfig, load_config
from .coupling import BLOCK_SIZE, Outcome, simulate_ensemble, write_raw_paths
from .domain import SamplingError
from .eigensolver import EigenSolverError, Grid, residual_pde_gradient, solve
from .groundfield import LogGradientField
from .potential import check_convexity_modulus
from .report import VerificationReport, _plain

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

COMMANDS = ("eigensolve", "verify-modulus", "simulate", "contraction", "gap-report", "boundary", "all")


class UsageError(Exception):
    pass


def _start_pair(cfg: RunConfig, domain):
    dim = domain.dim
    if cfg.x0 is not None and cfg.y0 is not None:
        return np.array(cfg.x0, dtype=float), np.array(cfg.y0, dtype=float)
    c = domain.center
    e = np.zeros(dim)
    e[0] = 1.0
    s = 0.3 * domain.inradius
    return c + s * e, c - s * e


class Session:
    """Lazily computed shared objects for one command."""

    def __init__(self, cfg: RunConfig, out: Path, groundstate_path: Path | None):
        self.cfg = cfg
        self.out = out
        self.gs_path = groundstate_path or out / "groundstate.txt"
        self.domain = cfg.build_domain()
        self.potential = cfg.build_potential()
        self._gs = None
        self._field = None

    def solve(self):
        self._gs = solve(self.domain, self.potential, self.cfg.h, boundary=self.cfg.boundary)
        return self._gs

    def groundstate(self, require_artifact=False):
        if self._gs is None:
            if self.gs_path.exists():
                try:
                    gs = load_groundstate(self.gs_path)
                except ArtifactError as exc:
                    raise UsageError(str(exc)) from None
                if (gs.domain.to_spec() != self.domain.to_spec()
                        or gs.potential.to_spec() != self.potential.to_spec()
                        or gs.h != Grid.build(self.domain, self.cfg.h).h
                        or gs.boundary != self.cfg.boundary):
                    raise UsageError(f"{self.gs_path} was computed for a different configuration; "
                                     "rerun `fundgap eigensolve`")
                self._gs = gs
            elif require_artifact:
                raise UsageError(f"ground-state artifact {self.gs_path} not found; "
                                 "run `fundgap eigensolve CONFIG` first")
            else:
                self.solve()
        return self._gs

    def field(self, require_artifact=False):
        if self._field is None:
            self._field = LogGradientField(self.groundstate(require_artifact))
        return self._field


# -- individual checks -------------------------------------------------------

def _eigen_reports(s: Session):
    gs = s.groundstate()
    rep = [VerificationReport(
        name="eigen_residual", margin=1e-8 - gs.residual0, tolerance=0.0, samples=gs.grid.n_interior,
        metadata={"h": gs.h, "boundary": gs.boundary, "bound": 1e-8},
        details={"lambda0": gs.lambda0, "lambda1": gs.lambda1, "residual0": gs.residual0,
                 "residual1": gs.residual1, "iterations": gs.iterations})]
    h = gs.h
    pts = s.domain.sample_interior(max(5 * h, 0.25 * s.domain.inradius), 16, rng=s.cfg.pair_seed)
    rep.append(residual_pde_gradient(gs, pts))
    return rep


def _check_gap(s):
    return [V.verify_gap(s.domain, s.potential, s.cfg.h, s.groundstate(), seed=s.cfg.pair_seed)]


def _check_gap_coupling(s):
    f = s.field()
    pairs = V.default_gap_pairs(f, count=s.cfg.gap_pairs)
    return [V.estimate_gap_from_coupling(f, s.cfg.sim, pairs)]


def _check_modulus(s):
    f = s.field()
    h = f.h
    pairs = V.sample_pairs(s.domain, s.cfg.pairs, 5 * h, rng=s.cfg.pair_seed)
    sep = np.linalg.norm(pairs[:, 0] - pairs[:, 1], axis=1)
    pairs = pairs[sep > 1e-12]
    rep = V.verify_log_concavity_modulus(f, s.domain.diameter, pairs)
    rep.metadata["pair_seed"] = s.cfg.pair_seed
    conv = check_convexity_modulus(s.potential, s.domain, pairs)
    return [conv, rep]


def _check_contraction(s):
    f = s.field()
    x0, y0 = _start_pair(s.cfg, s.domain)
    return [V.verify_contraction(f, x0, y0, s.cfg.sim)]


def _check_xi(s):
    f = s.field()
    if s.cfg.xi_x is not None and s.cfg.xi_y is not None:
        x, y = np.array(s.cfg.xi_x), np.array(s.cfg.xi_y)
    else:
        x, y = _start_pair(s.cfg, s.domain)
    return [V.xi_dynamics_check(f, x, y, dt=s.cfg.sim.dt, n=s.cfg.xi_samples, seed=s.cfg.xi_seed)]


def _check_supermartingale(s):
    f = s.field()
    x0, y0 = _start_pair(s.cfg, s.domain)
    return [V.supermartingale_check(f, x0, y0, s.cfg.sim, D1_factor=s.cfg.d1_factor)]


def _check_boundary(s):
    f = s.field()
    return [V.verify_boundary_asymptotics(f)]


def _check_divergence(s):
    f = s.field()
    return [V.boundary_divergence_profile(f, seed=s.cfg.pair_seed)]


def _check_identities(s):
    D = s.domain.diameter
    return [V.psi_identity_check(D), V.sin_lower_bound_check(D)]


CHECKS = {
    "gap": _check_gap, "gap_coupling": _check_gap_coupling, "modulus": _check_modulus,
    "contraction": _check_contraction, "xi_dynamics": _check_xi,
    "supermartingale": _check_supermartingale, "boundary": _check_boundary,
    "divergence": _check_divergence, "identities": _check_identities,
}


def _simulate(s: Session):
    f = s.field(require_artifact=True)
    x0, y0 = _start_pair(s.cfg, s.domain)
    ens = simulate_ensemble(x0, y0, f, s.cfg.sim)
    D = s.domain.diameter
    biggest = float(np.max(ens.xi))
    rep = VerificationReport(
        name="simulation_invariants", margin=min(0.5 * D - biggest, float(np.min(ens.xi))),
        tolerance=1e-12, samples=ens.n_traj,
        metadata={"sim": s.cfg.sim.to_dict(), "x0": x0, "y0": y0, "block_size": BLOCK_SIZE},
        details={"max_xi": biggest, "half_diameter": 0.5 * D,
                 "coupled_fraction": ens.fraction(Outcome.COUPLED),
                 "boundary_fraction": ens.fraction(Outcome.BOUNDARY),
                 "horizon_fraction": ens.fraction(Outcome.HORIZON),
                 "mean_final_time": float(ens.final_time.mean()),
                 "retries": ens.retries, "exhausted": ens.exhausted})
    if "raw-paths" in s.cfg.formats:
        for b, lo in enumerate(range(0, ens.n_traj, BLOCK_SIZE)):
            part = _slice(ens, lo, min(ens.n_traj, lo + BLOCK_SIZE))
            write_raw_paths(part, s.out / f"paths_{b:04d}.txt", start=lo)
    return [rep]


def _slice(ens, lo, hi):
    cut = {k: (None if getattr(ens, k) is None else getattr(ens, k)[lo:hi])
           for k in ("xi", "F", "outcome", "final_time", "stop_xi", "stop_F",
                     "integral", "stop_integral", "X", "Y")}
    return dataclasses.replace(ens, **cut)


def _run(command: str, s: Session):
    cfg = s.cfg
    if command == "eigensolve":
        s.solve()
        save_groundstate(s._gs, s.gs_path)
        return _eigen_reports(s)
    if command == "simulate":
        return _simulate(s)
    if command == "verify-modulus":
        return _check_modulus(s)
    if command == "contraction":
        return _check_contraction(s)
    if command == "gap-report":
        return _check_gap(s) + _check_gap_coupling(s)
    if command == "boundary":
        return _check_boundary(s) + _check_divergence(s)
    if command == "all":
        s.solve()
        save_groundstate(s._gs, s.gs_path)
        reports = _eigen_reports(s)
        for name in cfg.checks:
            reports += CHECKS[name](s)
        return reports
    raise UsageError(f"unknown command {command!r}")


# -- output ----------------------------------------------------------------------

def _fmt(x):
    return "-" if x is None else f"{x:.6g}"


def format_table(command: str, reports, gs=None) -> str:
    lines = [f"fundgap {command}"]
    if gs is not None:
        bound = V.gap_bound(gs.domain.diameter)
        status = next((r.status for r in reports if r.name == "spectral_gap"),
                      "PASS" if gs.gap >= bound else "FAIL")
        lines.append(f"{'lambda0':>12s} {'lambda1':>12s} {'gap':>12s} {'bound':>12s}  status")
        lines.append(f"{gs.lambda0:12.6g} {gs.lambda1:12.6g} {gs.gap:12.6g} {bound:12.6g}  {status}")
    lines.append(f"{'status':6s} {'check':34s} {'margin':>13s} {'tolerance':>11s} {'samples':>8s}")
    for r in reports:
        lines.append(f"{r.status:6s} {r.name:34s} {r.margin:+13.6g} {r.tolerance:11.3g} {r.samples:8d}")
        rule = r.metadata.get("tolerance_rule")
        if rule:
            lines.append(f"{'':6s}   tolerance: {rule}")
    passed = all(r.passed for r in reports)
    lines.append(f"overall: {'PASS' if passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def structured(command: str, cfg: RunConfig, reports) -> str:
    doc = {
        "command": command,
        "config": cfg.to_ini(),
        "passed": all(r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    return json.dumps(_plain(doc), sort_keys=True, indent=1) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fundgap", description="Numerical checks of the fundamental gap inequality.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        q = sub.add_parser(name)
        q.add_argument("config", help="INI configuration file")
        q.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration value (repeatable)")
        q.add_argument("--out", help="output directory (overrides [output] directory)")
        q.add_argument("--format", help="comma-separated subset of table,structured,raw-paths")
        q.add_argument("--groundstate", help="ground-state artifact path (default OUT/groundstate.txt)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.directory={args.out}")
    if args.format:
        overrides.append(f"output.formats={args.format}")
    try:
        cfg = load_config(args.config, overrides)
    except FileNotFoundError:
        print(f"fundgap: config file {args.config} not found", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"fundgap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    session = Session(cfg, out, Path(args.groundstate) if args.groundstate else None)
    try:
        reports = _run(args.command, session)
    except UsageError as exc:
        print(f"fundgap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EigenSolverError, SamplingError) as exc:
        print(f"fundgap: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"fundgap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    table = format_table(args.command, reports, session._gs if args.command in ("eigensolve", "gap-report", "all") else None)
    if "table" in cfg.formats:
        sys.stdout.write(table)
        (out / "report.txt").write_text(table)
    if "structured" in cfg.formats:
        (out / "report.json").write_text(structured(args.command, cfg, reports))
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
