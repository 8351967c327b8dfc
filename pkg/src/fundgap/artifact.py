"""Text artifact for a GroundState.

Layout (one record per line)::

    FUNDGAP-GROUNDSTATE
    version 1
    domain {"kind": "disk", "R": 1.0}
    potential {"kind": "zero"}
    h 0.0078125
    boundary cut-arm
    origin -1 -1
    shape 257 257
    lambda0 5.76...
    lambda1 14.6...
    residual0 ...
    residual1 ...
    iterations 12
    nodes 51429
    i j phi0 phi1          (one line per interior node, multi-index then values)

Floats are written with 17 significant digits, so a load reproduces the
saved arrays bit for bit.
"""
from __future__ import annotations

import json

import numpy as np

from .domain import domain_from_spec
from .eigensolver import GroundState, Grid
from .potential import potential_from_spec

MAGIC = "FUNDGAP-GROUNDSTATE"
VERSION = 1


class ArtifactError(ValueError):
    pass


def _g(x) -> str:
    return f"{float(x):.17g}"


def save_groundstate(gs: GroundState, path) -> None:
    grid = gs.grid
    idx = np.argwhere(grid.mask)
    lines = [
        MAGIC,
        f"version {VERSION}",
        "domain " + json.dumps(gs.domain.to_spec(), sort_keys=True),
        "potential " + json.dumps(gs.potential.to_spec(), sort_keys=True),
        f"h {_g(grid.h)}",
        f"boundary {gs.boundary}",
        "origin " + " ".join(_g(v) for v in grid.origin),
        "shape " + " ".join(str(int(s)) for s in grid.shape),
        f"lambda0 {_g(gs.lambda0)}",
        f"lambda1 {_g(gs.lambda1)}",
        f"residual0 {_g(gs.residual0)}",
        f"residual1 {_g(gs.residual1)}",
        f"iterations {int(gs.iterations)}",
        f"nodes {len(idx)}",
    ]
    body = [" ".join(str(int(k)) for k in row) + f" {_g(a)} {_g(b)}"
            for row, a, b in zip(idx, gs.phi0, gs.phi1)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines + body) + "\n")


def load_groundstate(path) -> GroundState:
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text or text[0] != MAGIC:
        raise ArtifactError(f"{path}: not a ground-state artifact (bad magic line)")
    header = {}
    pos = 1
    while pos < len(text):
        key, _, value = text[pos].partition(" ")
        header[key] = value
        pos += 1
        if key == "nodes":
            break
    try:
        version = int(header["version"])
        if version != VERSION:
            raise ArtifactError(f"{path}: unsupported artifact version {version}")
        domain = domain_from_spec(json.loads(header["domain"]))
        potential = potential_from_spec(json.loads(header["potential"]))
        h = float(header["h"])
        boundary = header["boundary"]
        origin = np.array([float(v) for v in header["origin"].split()])
        shape = tuple(int(v) for v in header["shape"].split())
        n_nodes = int(header["nodes"])
    except KeyError as exc:
        raise ArtifactError(f"{path}: missing header field {exc.args[0]!r}") from None
    rows = text[pos:pos + n_nodes]
    if len(rows) != n_nodes:
        raise ArtifactError(f"{path}: expected {n_nodes} node lines, found {len(rows)}")
    dim = len(shape)
    data = np.loadtxt(rows, ndmin=2)
    idx = data[:, :dim].astype(np.int64)
    phi0, phi1 = data[:, dim], data[:, dim + 1]
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(idx.T)] = True
    index = np.full(shape, -1, dtype=np.int64)
    index[mask] = np.arange(n_nodes)
    # argwhere order is the linear-index order used by the solver
    order = index[tuple(idx.T)]
    grid = Grid(origin=origin, h=h, shape=shape, mask=mask, index=index)
    p0 = np.empty(n_nodes)
    p1 = np.empty(n_nodes)
    p0[order] = phi0
    p1[order] = phi1
    return GroundState(
        grid=grid, lambda0=float(header["lambda0"]), lambda1=float(header["lambda1"]),
        phi0=p0, phi1=p1, residual0=float(header["residual0"]),
        residual1=float(header["residual1"]), iterations=int(header["iterations"]),
        domain=domain, potential=potential, boundary=boundary)
