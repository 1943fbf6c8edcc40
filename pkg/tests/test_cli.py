import subprocess
import sys

import pytest

from wring import cli
from wring.errors import NumericalError
from wring.fileio import read_table

CONFIG = """
[lattice]
L = 5
a = 6.0

[prep]
omega = 11.46
delta = 29.0
t_final = 1.0
omega_ramp = 0.25

[rotation]
omega_rot = 7.97
tau_rot = 0.15
offsets = [-0.5, 0.5]

[noise]
gamma = 0.1
sigma_omega_rel = 0.02
sigma_delta = 1.0

[sampling]
shots = 400
seed = 2

[ensemble]
Q = 2
seed = 3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "c.toml").write_text(CONFIG)
    return d


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(workdir):
    d, c = workdir, workdir / "c.toml"
    assert run("prepare", "--config", c, "--open", "--out", d / "s.npz") == 0
    assert run("sample", "--config", c, "--state", d / "s.npz", "--out", d / "z.csv") == 0
    assert run("sample", "--config", c, "--state", d / "s.npz", "--basis", "x", "--ideal",
               "--out", d / "xi.csv") == 0
    for k in range(2):
        assert run("sample", "--config", c, "--state", d / "s.npz", "--basis", "x",
                   "--rotation", k, "--seed", 10 + k, "--out", d / f"x{k}.csv") == 0
    assert run("prior", "--config", c, "--out", d / "e.npz", "--members-out", d / "m.csv") == 0
    return d


def test_estimate(pipeline, capsys):
    d = pipeline
    assert run("estimate", "--z", d / "z.csv", "--x", d / "xi.csv", "--mitigate",
               "--out", d / "est.csv") == 0
    cols, rows = read_table(d / "est.csv")
    assert "F_e [1]" in cols and 0 < float(rows[0][cols.index("F_e [1]")]) <= 1.2


def test_ingest(pipeline, capsys):
    assert run("ingest", "--shots", pipeline / "z.csv", "--L", 5, "--postselect") == 0
    assert "L=5 basis=z" in capsys.readouterr().out


def test_posterior(pipeline):
    d = pipeline
    assert run("posterior", "--ensemble", d / "e.npz", "--shots", d / "x0.csv", d / "x1.csv",
               "--out", d / "post.csv") == 0
    _, rows = read_table(d / "post.csv")
    assert len(rows) == 2
    assert sum(float(r[3]) for r in rows) == pytest.approx(1.0)


def test_report_is_byte_stable(pipeline):
    d, c = pipeline, pipeline / "c.toml"
    for name in ("r1.txt", "r2.txt"):
        assert run("report", "--config", c, "--z", d / "z.csv", "--x", d / "x0.csv", d / "x1.csv",
                   "--ensemble", d / "e.npz", "--bootstrap", 100, "--out", d / name) == 0
    text = (d / "r1.txt").read_bytes()
    assert text == (d / "r2.txt").read_bytes()
    for table in (b"populations", b"kl", b"fidelity", b"input_sha256"):
        assert table in text


def test_sweep_gap_grape(workdir):
    d, c = workdir, workdir / "c.toml"
    assert run("sweep", "--config", c, "--delta-min", 25, "--delta-max", 30, "--delta-step", 5,
               "--out", d / "sw.csv") == 0
    assert len(read_table(d / "sw.csv")[1]) == 2
    assert run("gap", "--sizes", "4,5,7,9", "--out", d / "gap.csv") == 0
    assert len(read_table(d / "gap.csv")[1]) == 4
    assert run("grape", "--L", 3, "--slices", 4, "--iterations", 3, "--out", d / "g.csv") == 0


def test_calibrate(workdir):
    import math
    from wring.measurement import resonance_curve
    om = 11.46
    lines = ["delta,P_e"] + [f"{x},{resonance_curve(x, om, 0.0, math.pi / om):.17g}"
                             for x in range(-30, 31, 2)]
    (workdir / "cal.csv").write_text("\n".join(lines) + "\n")
    assert run("calibrate", "--data", workdir / "cal.csv", "--t-pi", math.pi / om,
               "--out", workdir / "calfit.csv") == 0
    _, rows = read_table(workdir / "calfit.csv")
    assert float(rows[0][0]) == pytest.approx(om, abs=1e-6)


def test_validation_exit_code(workdir, capsys):
    bad = workdir / "bad.toml"
    bad.write_text(CONFIG.replace("delta = 29.0", 'delta = "29"'))
    assert run("prepare", "--config", bad, "--out", workdir / "no.npz") == 2
    assert "delta" in capsys.readouterr().err
    short = workdir / "short.csv"
    short.write_text("delta,P_e\n0,1\n1,0.9\n")
    assert run("calibrate", "--data", short, "--t-pi", 0.27, "--out", workdir / "n.csv") == 2
    short.write_text("delta,P_e\n0,high\n")
    assert run("calibrate", "--data", short, "--t-pi", 0.27, "--out", workdir / "n.csv") == 2


def test_capacity_exit_code(workdir):
    big = workdir / "big.toml"
    big.write_text(CONFIG.replace("L = 5", "L = 11").replace("a = 6.0", "a = 7.1"))
    assert run("prior", "--config", big, "--out", workdir / "e11.npz") == 3


def test_numerical_exit_code(monkeypatch):
    def boom(args):
        raise NumericalError("diverged")
    monkeypatch.setattr(cli, "cmd_gap", boom)
    assert run("gap", "--out", "unused.csv") == 4


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "wring.cli", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for cmd in ("prepare", "sweep", "gap", "grape", "sample", "ingest", "estimate", "prior",
                "posterior", "calibrate", "report"):
        assert cmd in out
