import textwrap

import pytest

from jrlab.cli import ConfigError, load_config, main, parse_expectation

SMALL_INDEX = """
[domain]
kind = plane  ; inline comments are allowed
radius = 2
n = 24
[higgs]
kind = model
coeff = 1
p = 1
q = 0
t = 16
[solver]
num_pairs = 12
"""

SMALL_VORTEX = """
[domain]
kind = torus
lx = 1
ly = 1
nx = 24
ny = 24
[higgs]
kind = vortex
d = 1
tau_factor = 2
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def run(tmp_path, cmd, text, *extra, out="out"):
    cfg = write(tmp_path, text)
    return main([cmd, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def test_index_pass_with_assertions(tmp_path, capsys):
    code = run(tmp_path, "index", SMALL_INDEX + "[assert]\ndims = 1,0\nindex = 1\nambiguous = false\n")
    assert code == 0
    out = capsys.readouterr().out
    assert "assert:dims,pass" in out and out.rstrip().endswith("status,pass")
    assert (tmp_path / "out" / "index.csv").read_text().splitlines()[1].startswith("run,1,0,1")


def test_failed_assertion_exit_one(tmp_path):
    assert run(tmp_path, "index", SMALL_INDEX + "[assert]\nindex = 0:0.5\n") == 1
    assert "assert:index,fail" in (tmp_path / "out" / "summary.txt").read_text()


def test_spectrum_writes_figure(tmp_path):
    assert run(tmp_path, "spectrum", SMALL_INDEX) == 0
    png = tmp_path / "out" / "spectrum.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert run(tmp_path, "spectrum", SMALL_INDEX, "--no-figures", out="nofig") == 0
    assert not (tmp_path / "nofig" / "spectrum.png").exists()


def test_bradlow_violation_exit_one(tmp_path, capsys):
    text = SMALL_VORTEX.replace("tau_factor = 2", "tau_factor = 0.9")
    assert run(tmp_path, "vortex", text) == 1
    assert "Bradlow bound violated" in capsys.readouterr().err


@pytest.mark.parametrize("text,needle", [
    (SMALL_INDEX.replace("radius = 2\n", ""), "missing domain.radius"),
    (SMALL_INDEX.replace("n = 24", "n = 2x4"), "line 5"),
    (SMALL_INDEX + "num_paris = 3\n", "num_paris"),
    (SMALL_INDEX + "[bogus]\nx = 1\n", "bogus"),
    (SMALL_INDEX.replace("kind = model", "kind = magic"), "higgs.kind"),
])
def test_config_errors_exit_two(tmp_path, capsys, text, needle):
    assert run(tmp_path, "index", text) == 2
    assert needle in capsys.readouterr().err
    # nothing is computed or written on a config error
    assert not (tmp_path / "out" / "index.csv").exists()


def test_effective_config_reproduces_run(tmp_path):
    assert run(tmp_path, "vortex", SMALL_VORTEX, "--no-figures", out="a") == 0
    assert run(tmp_path, "vortex", SMALL_VORTEX, "--no-figures", out="b") == 0
    first = (tmp_path / "a" / "vortex.csv").read_bytes()
    assert first == (tmp_path / "b" / "vortex.csv").read_bytes()
    eff = tmp_path / "a" / "effective.ini"
    assert main(["vortex", "--config", str(eff), "--out", str(tmp_path / "c")]) == 0
    assert first == (tmp_path / "c" / "vortex.csv").read_bytes()


def test_overrides_and_presets():
    cfg = load_config("index", None, {("higgs", "t"): "8.0"})
    assert cfg.get("higgs", "t", float) == 8.0
    assert cfg.get("domain", "radius", float) == 2.5


def test_parse_expectation_forms():
    cfg = load_config("index")
    assert parse_expectation(cfg, "a", "<1e-6") == ("lt", 1e-6)
    assert parse_expectation(cfg, "a", "0.4:0.6") == ("range", 0.4, 0.6)
    assert parse_expectation(cfg, "a", "true") == ("eq", True)
    assert parse_expectation(cfg, "a", "1,0") == ("eq", (1, 0))
    assert parse_expectation(cfg, "a", "2") == ("eq", 2.0)
    with pytest.raises(ConfigError):
        parse_expectation(cfg, "a", "x:y")
