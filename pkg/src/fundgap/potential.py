"""Closed-form convex potentials and the convexity-modulus check."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .report import VerificationReport


def _pts(x):
    arr = np.asarray(x, dtype=float)
    return np.atleast_2d(arr) if arr.ndim <= 1 else arr, arr.ndim <= 1


class Potential:
    """Base class: ``V(x)`` evaluates, ``V.grad(x)`` differentiates.

    Points follow the domain convention, ``(dim,)`` or ``(n, dim)``.
    """

    kind = ""

    def _value(self, pts):
        raise NotImplementedError

    def _gradient(self, pts):
        raise NotImplementedError

    def __call__(self, x):
        pts, single = _pts(x)
        v = self._value(pts)
        return float(v[0]) if single else v

    eval = __call__

    def grad(self, x):
        pts, single = _pts(x)
        g = self._gradient(pts)
        return g[0] if single else g

    def __add__(self, other):
        if not isinstance(other, Potential):
            return NotImplemented
        left = self.terms if isinstance(self, SumPotential) else (self,)
        right = other.terms if isinstance(other, SumPotential) else (other,)
        return SumPotential(left + right)

    def is_convex(self) -> bool:
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(Potential):
    kind = "zero"

    def _value(self, pts):
        return np.zeros(len(pts))

    def _gradient(self, pts):
        return np.zeros_like(pts)

    def is_convex(self):
        return True

    def to_spec(self):
        return {"kind": "zero"}


@dataclass(frozen=True, eq=False)
class Quadratic(Potential):
    """``V(x) = c |x - center|^2``; ``center=None`` means the origin."""

    c: float
    center: tuple | None = None
    kind = "quadratic"

    def _offset(self, pts):
        return pts if self.center is None else pts - np.asarray(self.center, dtype=float)

    def _value(self, pts):
        d = self._offset(pts)
        return self.c * np.einsum("ij,ij->i", d, d)

    def _gradient(self, pts):
        return 2.0 * self.c * self._offset(pts)

    def is_convex(self):
        return self.c >= 0

    def to_spec(self):
        spec = {"kind": "quadratic", "c": self.c}
        if self.center is not None:
            spec["center"] = [float(v) for v in np.ravel(self.center)]
        return spec


@dataclass(frozen=True, eq=False)
class Linear(Potential):
    """``V(x) = <g, x>``."""

    g: tuple
    kind = "linear"

    def _value(self, pts):
        return pts @ np.asarray(self.g, dtype=float)

    def _gradient(self, pts):
        return np.broadcast_to(np.asarray(self.g, dtype=float), pts.shape).copy()

    def is_convex(self):
        return True

    def to_spec(self):
        return {"kind": "linear", "g": [float(v) for v in np.ravel(self.g)]}


@dataclass(frozen=True, eq=False)
class SumPotential(Potential):
    terms: tuple
    kind = "sum"

    def _value(self, pts):
        return sum(t._value(pts) for t in self.terms)

    def _gradient(self, pts):
        return sum(t._gradient(pts) for t in self.terms)

    def is_convex(self):
        return all(t.is_convex() for t in self.terms)

    def to_spec(self):
        return {"kind": "sum", "terms": [t.to_spec() for t in self.terms]}


@dataclass(frozen=True, eq=False)
class EvenPolynomial1D(Potential):
    """One dimensional ``V(z) = sum_k coeffs[k] z^(2k)``, even by construction."""

    coeffs: tuple = ()
    kind = "even_polynomial"

    def _value(self, pts):
        z2 = pts[:, 0] ** 2
        return np.polyval(list(self.coeffs)[::-1], z2) if self.coeffs else np.zeros(len(pts))

    def _gradient(self, pts):
        z = pts[:, 0]
        out = np.zeros(len(pts))
        for k, c in enumerate(self.coeffs[1:], start=1):
            out += 2 * k * c * z ** (2 * k - 1)
        return out[:, None]

    def is_convex(self):
        # sufficient: all coefficients nonnegative
        return all(c >= 0 for c in self.coeffs[1:])

    def to_spec(self):
        return {"kind": "even_polynomial", "coeffs": [float(c) for c in self.coeffs]}


def potential_from_spec(spec: dict) -> Potential:
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return Zero()
    if kind == "quadratic":
        center = spec.get("center")
        return Quadratic(float(spec["c"]), None if center is None else tuple(float(v) for v in center))
    if kind == "linear":
        return Linear(tuple(float(v) for v in spec["g"]))
    if kind == "even_polynomial":
        return EvenPolynomial1D(tuple(float(c) for c in spec.get("coeffs", ())))
    if kind == "sum":
        terms = tuple(potential_from_spec(t) for t in spec["terms"])
        return terms[0] if len(terms) == 1 else SumPotential(terms)
    raise ValueError(f"unknown potential kind {kind!r}")


def check_convexity_modulus(V: Potential, domain, pairs, tolerance: float = 1e-12) -> VerificationReport:
    """Check <grad V(x) - grad V(y), (x-y)/|x-y|> >= 0 over the given pairs.

    This is the modulus-of-convexity condition with a vanishing comparison
    potential. Failures are reported, not raised.
    """
    pairs = np.asarray(pairs, dtype=float)
    x, y = pairs[:, 0], pairs[:, 1]
    if not (np.all(domain.contains(x)) and np.all(domain.contains(y))):
        raise ValueError("all pair points must lie in the domain interior")
    diff = x - y
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0):
        raise ValueError("pairs must consist of distinct points")
    values = np.einsum("ij,ij->i", V.grad(x) - V.grad(y), diff) / dist
    worst = int(np.argmin(values))
    return VerificationReport(
        name="potential_convexity_modulus",
        margin=float(values[worst]),
        tolerance=tolerance,
        samples=len(values),
        metadata={"potential": V.to_spec(), "domain": domain.to_spec()},
        details={"worst_pair": pairs[worst]},
    )
