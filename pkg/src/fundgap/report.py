"""Pass/fail records produced by every check."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def _plain(value):
    """Convert numpy scalars/arrays (recursively) into JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


@dataclass
class VerificationReport:
    """Outcome of one check.

    ``margin`` is the signed distance to a violation (negative means the
    inequality failed by that much) and the check passes iff
    ``margin >= -tolerance``.
    """

    name: str
    margin: float
    tolerance: float
    samples: int = 0
    metadata: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.margin) and self.margin >= -self.tolerance)

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> dict:
        return _plain({
            "name": self.name,
            "status": self.status,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "samples": self.samples,
            "metadata": self.metadata,
            "details": self.details,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def line(self) -> str:
        return (f"{self.status}  {self.name:<34s} margin={self.margin:+.6g} "
                f"tol={self.tolerance:.3g} n={self.samples}")


def combine(name: str, reports: list[VerificationReport], samples: int | None = None,
            **metadata) -> VerificationReport:
    """Fold sub-reports into one whose margin is the worst normalised slack.

    ``samples`` defaults to the sum over parts; pass it explicitly when the
    parts are different views of the same ensemble.
    """
    worst = min(reports, key=lambda r: r.margin + r.tolerance)
    return VerificationReport(
        name=name,
        margin=worst.margin + worst.tolerance,
        tolerance=0.0,
        samples=sum(r.samples for r in reports) if samples is None else int(samples),
        metadata=metadata,
        details={"parts": [r.to_dict() for r in reports], "worst": worst.name},
    )
