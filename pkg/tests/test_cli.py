import subprocess
import sys

import pytest

from nomalf import __version__
from nomalf.cli import ExperimentSpec, _frange, _parse_matrix, main
from nomalf.errors import ConfigError


def run(argv, capsys):
    rc = main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


def body(text):
    return [l for l in text.splitlines() if not l.startswith("#")]


def test_cluster(capsys):
    rc, out, _ = run(["cluster"], capsys)
    assert rc == 0
    assert f"# nomalf: {__version__}" in out
    rows = body(out)
    assert rows[0].split("\t") == ["cluster", "user", "user_id", "distance_m", "noise_mw", "cnr"]
    assert rows[1].split("\t")[:4] == ["1", "1", "0", "25.0"]


def test_joint_reduces_clusters(capsys):
    rc, out, _ = run(["joint", "--P-dbm", "10"], capsys)
    assert rc == 0 and "layout: 2x3" in out


def test_exit_codes(capsys, tmp_path):
    assert run(["allocate-power", "--P-dbm", "10", "--no-reduce"], capsys)[0] == 4
    rc, _, err = run(["joint", "--M", "3"], capsys)
    assert rc == 2 and "M > (N-1)K" in err
    bad = tmp_path / "bad.toml"
    bad.write_text("[system]\nM = 6\nN = 3\nK = 2\nB = 42\nP_dbm = 30.0\nalpha = \"x\"\n")
    rc, _, err = run(["joint", "--config", str(bad)], capsys)
    assert rc == 2 and f"{bad}:7:" in err
    assert run(["joint", "--config", str(tmp_path / "missing.toml")], capsys)[0] == 2
    assert run(["simulate", "--trials", "10"], capsys)[0] == 2
    assert run(["experiment", "--values", "ten"], capsys)[0] == 2
    assert run(["experiment", "--schemes", "magic"], capsys)[0] == 2


def test_config_file_with_override(capsys):
    rc, out, _ = run(["allocate-bits", "--config", "configs/d2.toml", "--B", "30"], capsys)
    assert rc == 0 and "total_bits: 30" in out


def test_simulate_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    for p in (a, b):
        assert run(["simulate", "--trials", "3000", "--seed", "4", "-o", str(p)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert "esr_se" in a.read_text()


def test_experiment_custom_single_point(tmp_path, capsys):
    p = tmp_path / "x.tsv"
    argv = ["experiment", "--sweep", "P", "--values", "30", "--schemes", "joint,oma", "--trials", "2000",
            "-o", str(p)]
    assert run(argv, capsys)[0] == 0
    rows = body(p.read_text())
    assert len(rows) == 3
    head = rows[0].split("\t")
    assert head[:4] == ["sweep", "value", "scheme", "variant"] and "lb1_esr" in head


def test_experiment_byte_identical(tmp_path, capsys):
    out = []
    for name in ("a", "b"):
        p = tmp_path / f"{name}.tsv"
        main(["experiment", "--figure", "fig2", "--values", "30", "--trials", "2000", "--threads", "3",
              "-o", str(p)])
        out.append(p.read_bytes())
    capsys.readouterr()
    assert out[0] == out[1]


def test_validate_specfun(capsys):
    rc, out, _ = run(["validate-specfun"], capsys)
    assert rc == 0 and "\tFalse" not in out


def test_helpers():
    assert _parse_matrix("25,35;27,37").tolist() == [[25, 35], [27, 37]]
    with pytest.raises(ConfigError):
        _parse_matrix("a,b")
    assert _frange("0:20:10") == (0.0, 10.0, 20.0)
    assert _frange("5,7") == (5.0, 7.0)
    with pytest.raises(ConfigError):
        _frange("0:10:0")
    with pytest.raises(ConfigError):
        _frange("1:2")
    with pytest.raises(ConfigError):
        ExperimentSpec("fig9", "P", (1.0,), ("joint",))
    with pytest.raises(ConfigError):
        ExperimentSpec("custom", "P", (), ("joint",))
    with pytest.raises(ConfigError):
        ExperimentSpec("custom", "P", (1.0,), ())
    with pytest.raises(ConfigError):
        ExperimentSpec("custom", "P", (1.0,), ("magic",))


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nomalf", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
