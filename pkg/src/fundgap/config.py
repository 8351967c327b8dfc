"""Run configuration: INI text with sections, parsed with :mod:`configparser`.

Example::

    [domain]
    kind = disk
    R = 1

    [potential]
    kind = quadratic
    c = 2
    center = 0, 0

    [grid]
    h = 0.0078125
    boundary = cut-arm

    [simulation]
    dt = 1e-5
    eta = 0.02
    n_traj = 10000
    x0 = 0.3, 0
    y0 = -0.3, 0

    [verify]
    checks = gap, modulus, contraction

    [output]
    directory = out
    formats = table, structured

Values are validated when parsed; errors name the file, line, section and
key.  ``--set section.key=value`` command-line overrides are applied on top of
the file and reported as coming from the command line.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .coupling import SimConfig
from .domain import domain_from_spec
from .eigensolver import BOUNDARY_SCHEMES
from .potential import potential_from_spec

ALL_CHECKS = ("gap", "gap_coupling", "modulus", "contraction", "xi_dynamics",
              "supermartingale", "boundary", "divergence", "identities")
FORMATS = ("table", "structured", "raw-paths")

_DOMAIN_KEYS = {"interval": ("D",), "disk": ("R",), "ellipse": ("a", "b"),
                "rectangle": ("w", "h"), "polygon": ("vertices",)}
_POTENTIAL_KEYS = ("kind", "c", "center", "g", "coeffs", "terms")
_SIM_KEYS = tuple(f.name for f in dataclasses.fields(SimConfig)) + ("x0", "y0")
_VERIFY_KEYS = ("checks", "pairs", "pair_seed", "d1_factor", "xi_samples", "xi_seed",
                "xi_x", "xi_y", "gap_pairs")


class ConfigError(ValueError):
    """Invalid configuration; the message carries the location."""


@dataclass(frozen=True)
class RunConfig:
    domain: dict
    potential: dict = field(default_factory=lambda: {"kind": "zero"})
    h: float = 1.0 / 128
    boundary: str = "cut-arm"
    sim: SimConfig = field(default_factory=SimConfig)
    x0: tuple | None = None
    y0: tuple | None = None
    checks: tuple = ALL_CHECKS
    pairs: int = 10_000
    pair_seed: int = 0
    d1_factor: float = 1.05
    xi_samples: int = 100_000
    xi_seed: int = 0
    xi_x: tuple | None = None
    xi_y: tuple | None = None
    gap_pairs: int = 1
    output_dir: str = "fundgap-out"
    formats: tuple = ("table", "structured")

    def build_domain(self):
        return domain_from_spec(self.domain)

    def build_potential(self):
        return potential_from_spec(self.potential)

    def to_ini(self) -> str:
        return to_ini(self)


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _vec(values) -> str:
    return ", ".join(_num(v) for v in values)


def to_ini(cfg: RunConfig) -> str:
    out = ["[domain]"]
    for k, v in cfg.domain.items():
        out.append(f"{k} = {_vec(v) if isinstance(v, (list, tuple)) else (v if k == 'kind' else _num(v))}")
    out += ["", "[potential]"]
    pot = cfg.potential
    if pot["kind"] == "sum":
        out.append("kind = sum")
        out.append("terms = " + ", ".join(t["kind"] for t in pot["terms"]))
        params = {}
        for t in pot["terms"]:
            params.update({k: v for k, v in t.items() if k != "kind"})
    else:
        out.append(f"kind = {pot['kind']}")
        params = {k: v for k, v in pot.items() if k != "kind"}
    for k, v in params.items():
        out.append(f"{k} = {_vec(v) if isinstance(v, (list, tuple)) else _num(v)}")
    out += ["", "[grid]", f"h = {_num(cfg.h)}", f"boundary = {cfg.boundary}", "", "[simulation]"]
    for f in dataclasses.fields(SimConfig):
        out.append(f"{f.name} = {_num(getattr(cfg.sim, f.name))}")
    for name in ("x0", "y0"):
        if getattr(cfg, name) is not None:
            out.append(f"{name} = {_vec(getattr(cfg, name))}")
    out += ["", "[verify]", "checks = " + ", ".join(cfg.checks),
            f"pairs = {cfg.pairs}", f"pair_seed = {cfg.pair_seed}",
            f"d1_factor = {_num(cfg.d1_factor)}", f"xi_samples = {cfg.xi_samples}",
            f"xi_seed = {cfg.xi_seed}", f"gap_pairs = {cfg.gap_pairs}"]
    for name in ("xi_x", "xi_y"):
        if getattr(cfg, name) is not None:
            out.append(f"{name} = {_vec(getattr(cfg, name))}")
    out += ["", "[output]", f"directory = {cfg.output_dir}", "formats = " + ", ".join(cfg.formats), ""]
    return "\n".join(out)


class _Locator:
    """Maps (section, key) to the line it was read from, for diagnostics."""

    _section = re.compile(r"^\s*\[([^\]]+)\]")
    _key = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")

    def __init__(self, text, source, overridden=()):
        self.source = source
        self.lines = {}
        self.overridden = set(overridden)
        section = None
        for no, line in enumerate(text.splitlines(), start=1):
            m = self._section.match(line)
            if m:
                section = m.group(1).strip().lower()
                self.lines[(section, None)] = no
                continue
            m = self._key.match(line)
            if m and section is not None:
                self.lines[(section, m.group(1).strip().lower())] = no

    def where(self, section, key=None):
        if (section, key) in self.overridden:
            return f"command line override {section}.{key}"
        no = self.lines.get((section, key), self.lines.get((section, None)))
        loc = f"{self.source}:{no}" if no else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")


def parse_config(text: str, source: str = "<config>", overrides=()) -> RunConfig:
    """Parse INI text; ``overrides`` are ``"section.key=value"`` strings."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    done = []
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        section, key = section.lower(), key.strip().lower()
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())
        done.append((section, key))
    loc = _Locator(text, source, done)
    return _build(parser, loc)


def load_config(path, overrides=()) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, str(path), overrides)


def _build(parser, loc) -> RunConfig:
    known = {"domain", "potential", "grid", "simulation", "verify", "output"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{loc.where(section)}: unknown section")

    def get(section, key, conv, default=None, check=None, what=""):
        if not parser.has_option(section, key):
            if default is _REQUIRED:
                raise ConfigError(f"{loc.where(section)}: missing required key {key!r}")
            return default
        raw = parser.get(section, key)
        try:
            value = conv(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{loc.where(section, key)} = {raw!r}: not a valid {what or conv.__name__}") from None
        if check is not None and not check(value):
            raise ConfigError(f"{loc.where(section, key)} = {raw!r}: {check.__doc__}")
        return value

    def unknown(section, allowed):
        if parser.has_section(section):
            for key in parser.options(section):
                if key not in allowed:
                    raise ConfigError(f"{loc.where(section, key)}: unknown key")

    # domain
    if not parser.has_section("domain"):
        raise ConfigError(f"{loc.source}: missing [domain] section")
    kind = get("domain", "kind", str, _REQUIRED).strip().lower()
    if kind not in _DOMAIN_KEYS:
        raise ConfigError(f"{loc.where('domain', 'kind')}: unknown domain kind {kind!r}")
    unknown("domain", ("kind",) + tuple(k.lower() for k in _DOMAIN_KEYS[kind]))
    domain = {"kind": kind}
    for key in _DOMAIN_KEYS[kind]:
        if key == "vertices":
            domain[key] = list(get("domain", "vertices", _floats, _REQUIRED, what="number list"))
        else:
            domain[key] = get("domain", key.lower(), _float, _REQUIRED, _positive, "number")
    try:
        domain_from_spec(domain)
    except ValueError as exc:
        raise ConfigError(f"{loc.where('domain')}: {exc}") from None

    # potential
    unknown("potential", _POTENTIAL_KEYS)
    pkind = get("potential", "kind", lambda s: s.strip().lower(), "zero")

    def term(k):
        if k == "zero":
            return {"kind": "zero"}
        if k == "quadratic":
            spec = {"kind": "quadratic", "c": get("potential", "c", _float, _REQUIRED, _nonnegative, "number")}
            center = get("potential", "center", _floats, None, what="number list")
            if center is not None:
                spec["center"] = list(center)
            return spec
        if k == "linear":
            return {"kind": "linear", "g": list(get("potential", "g", _floats, _REQUIRED, what="number list"))}
        if k == "even_polynomial":
            return {"kind": "even_polynomial",
                    "coeffs": list(get("potential", "coeffs", _floats, _REQUIRED, what="number list"))}
        raise ConfigError(f"{loc.where('potential', 'kind')}: unknown potential kind {k!r}")

    if pkind == "sum":
        names = get("potential", "terms", _words, _REQUIRED, what="name list")
        potential = {"kind": "sum", "terms": [term(k) for k in names]}
    else:
        potential = term(pkind)
    try:
        potential_from_spec(potential)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{loc.where('potential')}: {exc}") from None

    unknown("grid", ("h", "boundary"))
    h = get("grid", "h", _float, 1.0 / 128, _positive, "number")
    boundary = get("grid", "boundary", lambda s: s.strip().lower(), "cut-arm")
    if boundary not in BOUNDARY_SCHEMES:
        raise ConfigError(f"{loc.where('grid', 'boundary')} = {boundary!r}: choose from {list(BOUNDARY_SCHEMES)}")

    unknown("simulation", _SIM_KEYS)
    sim_kw = {}
    for f in dataclasses.fields(SimConfig):
        if f.type in (int, "int") or isinstance(f.default, int):
            conv, check = _int, (_nonnegative if f.name in ("seed", "max_retries") else _positive)
        else:
            conv, check = _float, _positive
        value = get("simulation", f.name, conv, None, check, "integer" if conv is _int else "number")
        if value is not None:
            sim_kw[f.name] = value
    try:
        sim = SimConfig(**sim_kw)
    except ValueError as exc:
        raise ConfigError(f"{loc.where('simulation')}: {exc}") from None
    x0 = get("simulation", "x0", _floats, None, what="number list")
    y0 = get("simulation", "y0", _floats, None, what="number list")

    unknown("verify", _VERIFY_KEYS)
    checks = get("verify", "checks", _words, ALL_CHECKS, what="name list")
    bad = [c for c in checks if c not in ALL_CHECKS]
    if bad:
        raise ConfigError(f"{loc.where('verify', 'checks')}: unknown checks {bad}; known {list(ALL_CHECKS)}")
    verify_kw = dict(
        pairs=get("verify", "pairs", _int, 10_000, _positive, "integer"),
        pair_seed=get("verify", "pair_seed", _int, 0, _nonnegative, "integer"),
        d1_factor=get("verify", "d1_factor", _float, 1.05, _above_one, "number"),
        xi_samples=get("verify", "xi_samples", _int, 100_000, _positive, "integer"),
        xi_seed=get("verify", "xi_seed", _int, 0, _nonnegative, "integer"),
        xi_x=get("verify", "xi_x", _floats, None, what="number list"),
        xi_y=get("verify", "xi_y", _floats, None, what="number list"),
        gap_pairs=get("verify", "gap_pairs", _int, 1, _positive, "integer"),
    )

    unknown("output", ("directory", "formats"))
    out_dir = get("output", "directory", str, "fundgap-out")
    formats = get("output", "formats", _words, ("table", "structured"), what="name list")
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"{loc.where('output', 'formats')}: unknown formats {bad}; known {list(FORMATS)}")

    return RunConfig(domain=domain, potential=potential, h=h, boundary=boundary, sim=sim, x0=x0, y0=y0,
                     checks=tuple(checks), output_dir=out_dir, formats=tuple(formats), **verify_kw)


_REQUIRED = object()


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError
    return v


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError
    return int(v)


def _floats(s):
    return tuple(_float(p) for p in re.split(r"[,\s]+", s.strip()) if p)


def _words(s):
    return tuple(p.strip().lower() for p in s.split(",") if p.strip())


def _positive(v):
    """must be positive"""
    return v > 0


def _nonnegative(v):
    """must be nonnegative"""
    return v >= 0


def _above_one(v):
    """must be greater than 1"""
    return v > 1
