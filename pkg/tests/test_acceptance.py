"""End-to-end acceptance criteria 1-7, each at its stated tolerance.

Every test prints one ``criterion N: PASS/FAIL`` line (visible even when
pytest captures output) before asserting.
"""

import time

import pytest

from ywlab.cli import main
from ywlab.models import ModelConfig
from ywlab.suites import measure_suite, prm_suite, integral_suite, skorokhod_suite, spde_suite
from ywlab.yw_harness import (
    Ensemble,
    SolverSettings,
    StatisticRegistry,
    Verdict,
    compatibility_test,
    law_compare,
    null_calibration,
    pathwise_uniqueness_test,
    strong_solution_check,
)

pytestmark = pytest.mark.slow


@pytest.fixture
def announce(capsys):
    def _announce(n, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
        return ok
    return _announce


def _timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0


def _suite_detail(report, seconds):
    failed = ", ".join(c.name for c in report.failures())
    return f"({len(report.checks)} checks, {seconds:.1f}s{'; failed: ' + failed if failed else ''})"


def test_criterion_1_prm_law(announce):
    report, secs = _timed(prm_suite, N=10_000, seed=0)
    ok = report.verdict is Verdict.PASS and secs <= 60
    assert announce(1, ok, _suite_detail(report, secs))


def test_criterion_2_compensated_integrals(announce):
    report, secs = _timed(integral_suite, N=10_000, seed=0)
    assert announce(2, report.verdict is Verdict.PASS, _suite_detail(report, secs))


def test_criterion_3_solver_consistency(announce):
    report, secs = _timed(spde_suite, seed=0)
    ok = report.verdict is Verdict.PASS and secs <= 120
    assert announce(3, ok, _suite_detail(report, secs))


def test_criterion_4_yamada_watanabe(announce):
    t0 = time.perf_counter()
    parts = {}

    model = ModelConfig(preset="heat_jump").build()
    reps = [pathwise_uniqueness_test(model, model.bundle(0, j)) for j in range(100)]
    parts["a"] = all(r.max_distance == 0.0 and r.d0 == 0.0 for r in reps)

    strong = strong_solution_check(ModelConfig(preset="heat_jump"), master_seed=0, n_bundles=100)
    parts["b"] = strong.n_identical == 100

    compat_cfg = ModelConfig(preset="multiplicative_sigma", M=20, d=2, sigma_scale=1.0)
    good = compatibility_test(compat_cfg, 1000, 0.25)
    bad = compatibility_test(compat_cfg, 1000, 0.25, SolverSettings(variant="anticipating"))
    parts["c"] = good.verdict is Verdict.PASS and bad.max_abs > bad.threshold

    rejections = null_calibration(ModelConfig(preset="heat_jump"), repetitions=100, N=100, alpha=0.01)
    base = ModelConfig(preset="identity", initial_scale=1.0)
    shifted = law_compare(
        base, Ensemble(1, 100), Ensemble(2, 100, base.with_(initial_mean=(1.0,))),
        StatisticRegistry(times=(1.0,), coords=(1,)), alpha=0.01,
    )
    parts["d"] = rejections <= 5 and shifted.reject

    secs = time.perf_counter() - t0
    ok = all(parts.values()) and secs <= 600
    detail = (f"(a {parts['a']}, b {strong.n_identical}/100, c {good.max_abs:.3f}/{bad.max_abs:.3f} "
              f"vs {good.threshold:.3f}, d {rejections}/100 null rejections, shifted reject {shifted.reject}; {secs:.0f}s)")
    assert announce(4, ok, detail)


def test_criterion_5_skorokhod(announce):
    report, secs = _timed(skorokhod_suite, n_triples=1000, seed=0)
    assert announce(5, report.verdict is Verdict.PASS, _suite_detail(report, secs))


def test_criterion_6_counting_metric(announce):
    report, secs = _timed(measure_suite, n_triples=1000, seed=0)
    assert announce(6, report.verdict is Verdict.PASS, _suite_detail(report, secs))


def test_criterion_7_determinism(announce, tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[model]\npreset = heat_jump\nintensity = alpha_half\n\n[run]\nN = 6\nseed = 42\n")
    runs = {}
    for label, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        code = main(["simulate", "--config", str(cfg), "--threads", threads, "--out", str(tmp_path / label)])
        assert code == 0
        runs[label] = {p.name: p.read_bytes() for p in sorted((tmp_path / label).iterdir())}
    capsys.readouterr()
    ok = runs["a"] == runs["b"] == runs["c"] and len(runs["a"]) == 13
    assert announce(7, ok, f"({len(runs['a'])} files compared across 3 runs)")
