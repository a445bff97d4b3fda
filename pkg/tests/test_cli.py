import pytest

from ywlab.cli import (
    EXIT_FAIL,
    EXIT_INCONCLUSIVE,
    EXIT_PASS,
    EXIT_USAGE,
    UsageError,
    main,
    parse_config,
    read_path_csv,
)
from ywlab.noise import deserialize

COMPAT_INI = """
[model]
preset = multiplicative_sigma
M = 20
d = 2
sigma_scale = 1.0

[run]
N = 1000
t_cut = 0.25
"""


def _run(tmp_path, *argv, out="out"):
    return main([*argv, "--out", str(tmp_path / out)])


def test_parse_config_full_grammar():
    cfg = parse_config("""
[model]
preset = heat
d = 3
M = 40
T = 2.0
initial_mean = 1, 0.5
n_max = all
intensity = mine

[run]
N = 7
seed = 11
alpha = 0.05
scheme = semi_implicit

[intensity mine]
kind = point_masses
points = -1; 1
weights = 0.5, 0.5
""")
    assert cfg.model.d == 3 and cfg.model.M == 40 and cfg.model.T == 2.0
    assert cfg.model.initial_mean == (1.0, 0.5) and cfg.model.n_max is None
    assert cfg.N == 7 and cfg.seed == 11 and cfg.alpha == 0.05
    assert cfg.solver.scheme == "semi_implicit"
    assert cfg.model.build().nu.n_layers == 1


@pytest.mark.parametrize("text", ["[model]\ncolour = red\n", "[run]\nspeed = 3\n", "[extras]\na = 1\n", "[model\n"])
def test_parse_config_rejects(text):
    with pytest.raises(UsageError):
        parse_config(text)


def test_simulate_deterministic_across_threads(tmp_path, capsys):
    assert _run(tmp_path, "simulate", "--N", "4", "--seed", "3", out="a") == EXIT_PASS
    assert _run(tmp_path, "simulate", "--N", "4", "--seed", "3", "--threads", "3", out="b") == EXIT_PASS
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 9
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    digest = capsys.readouterr().out.split()[0]
    head = (tmp_path / "a" / "solution_0000.csv").read_text().splitlines()[:2]
    assert head == [f"# config_digest,{digest}", "t,U1,U2,U3,U4"]
    assert deserialize((tmp_path / "a" / "bundle_0002.ywnb").read_bytes()).config_digest == digest


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("YWLAB_OUT", str(tmp_path / "env"))
    assert main(["simulate"]) == EXIT_PASS
    assert (tmp_path / "env" / "summary.txt").exists()


def test_unknown_preset_writes_nothing(tmp_path):
    assert _run(tmp_path, "simulate", "--preset", "nope") == EXIT_USAGE
    assert not (tmp_path / "out").exists()


def test_unstable_explicit_step_is_usage_error(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\npreset = heat_jump\nM = 50\n")
    assert _run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_USAGE
    assert not (tmp_path / "out").exists()


def test_bad_threads(tmp_path):
    assert _run(tmp_path, "simulate", "--threads", "0") == EXIT_USAGE


def test_verify_small_sample_inconclusive(tmp_path):
    assert _run(tmp_path, "verify", "prm", "--N", "10") == EXIT_INCONCLUSIVE
    assert (tmp_path / "out" / "verify_prm.csv").read_text().startswith("# config_digest,")


def test_verify_skorokhod_passes(tmp_path):
    assert _run(tmp_path, "verify", "skorokhod", "--N", "100") == EXIT_PASS


def test_yw_pathwise_and_transfer(tmp_path):
    assert _run(tmp_path, "yw", "pathwise", "--N", "5") == EXIT_PASS
    assert _run(tmp_path, "yw", "transfer") == EXIT_PASS
    assert "verdict: pass" in (tmp_path / "out" / "yw_transfer.txt").read_text()


def test_yw_strong_ambient_fails(tmp_path):
    assert _run(tmp_path, "yw", "strong", "--N", "3") == EXIT_PASS
    assert _run(tmp_path, "yw", "strong", "--N", "3", "--variant", "ambient") == EXIT_FAIL


def test_yw_law_size_mismatch(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nN = 100\nN_b = 50\n")
    assert _run(tmp_path, "yw", "law", "--config", str(cfg)) == EXIT_USAGE
    assert not (tmp_path / "out").exists()


def test_yw_compat_negative_control(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(COMPAT_INI)
    assert _run(tmp_path, "yw", "compat", "--config", str(cfg)) == EXIT_PASS
    assert _run(tmp_path, "yw", "compat", "--config", str(cfg), "--variant", "anticipating") == EXIT_FAIL


def test_d0_command(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("t,x\n0,0\n0.4,1\n1,1\n")
    b.write_text("t,x\n0,0\n0.5,1\n1,1\n")
    assert main(["d0", str(a), str(b)]) == EXIT_PASS
    out = capsys.readouterr().out
    assert out.startswith("d0 0.2231435513") and "sup 1.0" in out
    assert read_path_csv(str(a)).horizon == 1.0
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x\n0.1,0\n")
    assert main(["d0", str(a), str(bad)]) == EXIT_USAGE
    assert main(["d0", str(a), str(tmp_path / "missing.csv")]) == EXIT_USAGE


def test_semicolon_separates_marks_not_comments():
    cfg = parse_config("[model]\nintensity = spaced\n\n[intensity spaced]\nkind = point_masses\n"
                       "points = -1 ; 1   # two atoms\nweights = 1, 1\n")
    nu = cfg.model.build().nu
    assert nu.n_layers == 1 and nu.symmetric
