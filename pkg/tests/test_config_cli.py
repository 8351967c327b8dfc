import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fundgap import cli
from fundgap.config import ConfigError, RunConfig, load_config, parse_config
from fundgap.coupling import SimConfig

INTERVAL = """\
[domain]
kind = interval
D = 1

[grid]
h = 0.001

[simulation]
dt = 2e-5
eta = 0.03
horizon = 0.05
n_traj = 400
record_stride = 250

[verify]
checks = gap
"""

SMALL_DISK = """\
[domain]
kind = disk
R = 1

[grid]
h = 0.03125

[simulation]
dt = 4e-5
eta = 0.04
horizon = 0.03
n_traj = 300
record_stride = 50

[verify]
checks = gap, modulus, identities, boundary, divergence, xi_dynamics, contraction, supermartingale
pairs = 500
xi_samples = 5000
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- parsing -------------------------------------------------------------------

def test_parse_example():
    cfg = parse_config(SMALL_DISK)
    assert cfg.domain == {"kind": "disk", "R": 1.0}
    assert cfg.potential == {"kind": "zero"}
    assert cfg.h == 0.03125
    assert cfg.sim.n_traj == 300
    assert cfg.pairs == 500
    assert "modulus" in cfg.checks


def test_defaults():
    cfg = parse_config("[domain]\nkind = interval\nD = 2\n")
    assert cfg.sim == SimConfig()
    assert cfg.formats == ("table", "structured")
    assert cfg.d1_factor == 1.05


def test_sum_potential():
    cfg = parse_config("[domain]\nkind = disk\nR = 1\n[potential]\nkind = sum\nterms = quadratic, linear\n"
                       "c = 2\ng = 1, 0\n")
    V = cfg.build_potential()
    assert V([1.0, 0.0]) == pytest.approx(3.0)


@pytest.mark.parametrize("text, fragment", [
    ("[domain]\nkind = disk\nR = 1\n[grid]\nh = -0.01\n", "run.ini:5: [grid] h = '-0.01': must be positive"),
    ("[domain]\nkind = disk\nR = 1\nQ = 3\n", "run.ini:4: [domain] q: unknown key"),
    ("[domain]\nkind = blob\n", "unknown domain kind"),
    ("[domain]\nkind = disk\n", "missing required key 'r'"),
    ("[domain]\nkind = disk\nR = 1\n[simulation]\nn_traj = 2.5\n", "[simulation] n_traj = '2.5': not a valid integer"),
    ("[domain]\nkind = disk\nR = 1\n[simulation]\ndt = 1e-3\neta = 0.01\n", "below 4*sqrt(2*dt)"),
    ("[domain]\nkind = disk\nR = 1\n[verify]\nchecks = gap, magic\n", "unknown checks ['magic']"),
    ("[domain]\nkind = disk\nR = 1\n[colour]\nx = 1\n", "unknown section"),
    ("[domain]\nkind = disk\nR = 1\n[potential]\nkind = quadratic\nc = -1\n", "must be nonnegative"),
    ("[domain]\nkind = disk\nR = nan\n", "not a valid number"),
    ("[domain]\nkind = disk\nR = 1\n[grid]\nboundary = smooth\n", "run.ini:5: [grid] boundary = 'smooth'"),
], ids=["negative_h", "unknown_key", "bad_kind", "missing", "float_int", "eta", "checks", "section", "concave",
        "nan", "scheme"])
def test_errors_name_the_field(tmp_path, text, fragment):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, text))
    assert fragment in str(err.value)


def test_override():
    cfg = parse_config(SMALL_DISK, overrides=["grid.h=0.0625", "simulation.seed=7"])
    assert cfg.h == 0.0625
    assert cfg.sim.seed == 7
    with pytest.raises(ConfigError, match="command line override grid.h"):
        parse_config(SMALL_DISK, overrides=["grid.h=0"])
    with pytest.raises(ConfigError, match="section.key=value"):
        parse_config(SMALL_DISK, overrides=["h=0.1"])


finite = st.floats(0.05, 20.0, allow_nan=False)


@st.composite
def configs(draw):
    kind = draw(st.sampled_from(["interval", "disk", "ellipse", "rectangle"]))
    domain = {"interval": lambda: {"kind": "interval", "D": draw(finite)},
              "disk": lambda: {"kind": "disk", "R": draw(finite)},
              "ellipse": lambda: dict(zip(("kind", "b", "a"), ["ellipse", *sorted([draw(finite), draw(finite)])])),
              "rectangle": lambda: {"kind": "rectangle", "w": draw(finite), "h": draw(finite)}}[kind]()
    potential = draw(st.sampled_from([
        {"kind": "zero"},
        {"kind": "quadratic", "c": draw(st.floats(0, 5)), "center": [draw(st.floats(-1, 1)), 0.0]},
        {"kind": "linear", "g": [draw(st.floats(-3, 3)), draw(st.floats(-3, 3))]},
    ]))
    dt = draw(st.floats(1e-6, 1e-3))
    sim = SimConfig(dt=dt, eta=4 * math.sqrt(2 * dt) * draw(st.floats(1.0, 3.0)),
                    horizon=draw(st.floats(0.001, 1.0)), n_traj=draw(st.integers(1, 10**5)),
                    seed=draw(st.integers(0, 2**63)), record_stride=draw(st.integers(1, 1000)))
    return RunConfig(domain=domain, potential=potential, h=draw(st.floats(1e-4, 0.1)), sim=sim,
                     boundary=draw(st.sampled_from(["cut-arm", "staircase"])),
                     x0=(0.1, 0.0), y0=(-0.1, 0.0), pairs=draw(st.integers(1, 10**5)),
                     pair_seed=draw(st.integers(0, 1000)), d1_factor=draw(st.floats(1.001, 2.0)),
                     checks=tuple(draw(st.lists(st.sampled_from(["gap", "modulus", "contraction"]),
                                                min_size=1, max_size=3, unique=True))),
                     formats=("structured", "raw-paths"), output_dir="somewhere")


@settings(max_examples=100, deadline=None)
@given(configs())
def test_ini_round_trip(cfg):
    assert parse_config(cfg.to_ini()) == cfg


# -- command line ----------------------------------------------------------------

def run(tmp_path, *argv, text=INTERVAL):
    path = write(tmp_path, text)
    return cli.main([argv[0], str(path), "--out", str(tmp_path / "out"), *argv[1:]])


def test_gap_report_interval(tmp_path, capsys):
    code = run(tmp_path, "gap-report")
    out = capsys.readouterr().out
    assert code == 0
    row = out.splitlines()[2].split()
    lam0, lam1, gap, bound = map(float, row[:4])
    assert lam0 == pytest.approx(9.87, abs=0.005)
    assert lam1 == pytest.approx(39.48, abs=0.005)
    assert gap == pytest.approx(29.61, abs=0.005)
    assert bound == pytest.approx(29.61, abs=0.005)
    assert row[4] == "PASS"
    assert "tolerance:" in out
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["command"] == "gap-report"
    assert {r["name"] for r in doc["reports"]} >= {"spectral_gap"}


def test_simulate_requires_artifact(tmp_path, capsys):
    assert run(tmp_path, "simulate") == 2
    assert "run `fundgap eigensolve" in capsys.readouterr().err


def test_eigensolve_then_simulate(tmp_path, capsys):
    assert run(tmp_path, "eigensolve") == 0
    assert (tmp_path / "out" / "groundstate.txt").exists()
    assert run(tmp_path, "simulate", "--format", "structured,raw-paths") == 0
    files = sorted(p.name for p in (tmp_path / "out").glob("paths_*.txt"))
    assert files == ["paths_0000.txt", "paths_0001.txt"]
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["reports"][0]["name"] == "simulation_invariants"


@pytest.mark.parametrize("change", ["grid.h=0.0005", "grid.boundary=staircase"])
def test_stale_artifact_rejected(tmp_path, capsys, change):
    assert run(tmp_path, "eigensolve") == 0
    assert run(tmp_path, "simulate", "--set", change) == 2
    assert "different configuration" in capsys.readouterr().err


def test_bad_config_exit(tmp_path, capsys):
    assert run(tmp_path, "eigensolve", text=INTERVAL.replace("h = 0.001", "h = -1")) == 2
    assert "[grid] h" in capsys.readouterr().err
    assert cli.main(["eigensolve", str(tmp_path / "missing.ini")]) == 2


def test_all_small_disk(tmp_path, capsys):
    assert run(tmp_path, "all", text=SMALL_DISK) == 0
    out = capsys.readouterr().out
    assert out.rstrip().endswith("overall: PASS")
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["passed"]
    assert all(r["status"] == "PASS" for r in doc["reports"])


def test_structured_output_is_deterministic(tmp_path, monkeypatch):
    # same relative output directory, since the config is embedded in the report
    docs = []
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        write(tmp_path / name, INTERVAL)
        assert cli.main(["verify-modulus", "run.ini", "--out", "out", "--set", "verify.pairs=200"]) == 0
        docs.append((tmp_path / name / "out" / "report.json").read_bytes())
    assert docs[0] == docs[1]


def test_failing_check_exits_one(tmp_path, monkeypatch, capsys):
    from fundgap.report import VerificationReport
    monkeypatch.setitem(cli.CHECKS, "identities",
                        lambda s: [VerificationReport(name="forced", margin=-1.0, tolerance=0.0)])
    text = INTERVAL.replace("checks = gap", "checks = identities")
    assert run(tmp_path, "all", text=text) == 1
    assert "overall: FAIL" in capsys.readouterr().out
