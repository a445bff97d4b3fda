"""Command-line entry point: ``ywlab simulate | verify | yw | d0``.

Exit codes: 0 pass, 1 verdict fail, 2 usage or configuration error,
3 inconclusive (too few samples for a statistical verdict), 4 infrastructure
error.  Every output file carries the digest of the fully resolved run
configuration.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .measure_core import ConfigurationError, load_registry
from .models import PRESETS, ModelConfig, UnknownPreset
from .noise import digest, serialize
from .skorokhod import JumpPath, d0, sup_distance
from .spde_solver import SCHEMES, SUMMATIONS, VARIANTS, UnsupportedConfiguration
from .suites import SUITES, run_suite
from .yw_harness import (
    RELABELINGS,
    Ensemble,
    Experiment,
    InfrastructureError,
    SolverSettings,
    Verdict,
    compatibility_test,
    law_compare,
    pathwise_uniqueness_test,
    strong_solution_check,
    transfer_check,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE, EXIT_INFRA = 0, 1, 2, 3, 4
OUT_ENV = "YWLAB_OUT"
YW_CHECKS = ("pathwise", "strong", "compat", "law", "transfer")

_EXIT = {Verdict.PASS: EXIT_PASS, Verdict.FAIL: EXIT_FAIL, Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    N: int | None = None
    N_b: int | None = None
    seed: int = 0
    alpha: float = 0.01
    solver: SolverSettings = SolverSettings()
    v2_summation: str = ""
    t_cut: float | None = None
    relabeling: str = "identity"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        return out

    def digest(self) -> str:
        return digest(self.to_dict())


# configparser lowercases keys
_MODEL_FIELDS = {f.name.lower(): (f.name, f.type) for f in fields(ModelConfig) if f.name != "intensities"}
_RUN_KEYS = {
    "n": ("N", int), "n_b": ("N_b", int), "seed": ("seed", int), "alpha": ("alpha", float),
    "t_cut": ("t_cut", float), "v2_summation": ("v2_summation", str.strip),
    "relabeling": ("relabeling", str.strip),
}
_SOLVER_KEYS = ("scheme", "summation", "variant")


def _model_value(key: str, kind: str, raw: str):
    if key == "initial_mean":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if key == "n_max":
        return None if raw.strip().lower() in ("", "none", "all") else int(raw)
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw.strip()


def parse_config(text: str) -> RunConfig:
    """Parse the ``[model]``, ``[run]`` and ``[intensity NAME]`` sections."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config: {exc}") from exc
    model_kw, run_kw, solver_kw = {}, {}, {}
    if cp.has_section("model"):
        for key, raw in cp["model"].items():
            if key not in _MODEL_FIELDS:
                raise UsageError(f"unknown [model] key {key!r}")
            name, kind = _MODEL_FIELDS[key]
            try:
                model_kw[name] = _model_value(name, kind, raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r}") from exc
    if cp.has_section("run"):
        for key, raw in cp["run"].items():
            if key in _SOLVER_KEYS:
                solver_kw[key] = raw.strip()
            elif key in _RUN_KEYS:
                name, conv = _RUN_KEYS[key]
                try:
                    run_kw[name] = conv(raw)
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {raw!r}") from exc
            else:
                raise UsageError(f"unknown [run] key {key!r}")
    extra = [s for s in cp.sections() if s not in ("model", "run")]
    bad = [s for s in extra if not s.startswith("intensity ")]
    if bad:
        raise UsageError(f"unknown section {bad[0]!r}")
    if extra:
        sub = configparser.ConfigParser()
        for s in extra:
            sub[s] = dict(cp[s])
        buf = io.StringIO()
        sub.write(buf)
        model_kw["intensities"] = buf.getvalue()
    return RunConfig(ModelConfig(**model_kw), solver=SolverSettings(**solver_kw), **run_kw)


def _resolve(args) -> RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        cfg = parse_config(text)
    else:
        cfg = RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "N", None) is not None:
        over["N"] = args.N
    if over:
        cfg = replace(cfg, **over)
    if getattr(args, "preset", None):
        cfg = replace(cfg, model=cfg.model.with_(preset=args.preset))
    if getattr(args, "variant", None):
        cfg = replace(cfg, solver=replace(cfg.solver, variant=args.variant))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    m = cfg.model
    if m.preset not in PRESETS:
        raise UsageError(f"unknown preset {m.preset!r} (choose from {', '.join(PRESETS)})")
    if m.intensities:
        try:
            load_registry(m.intensities)
        except (ConfigurationError, ValueError, KeyError) as exc:
            raise UsageError(f"bad intensity section: {exc}") from exc
    if m.d < 1 or m.M < 1 or m.T <= 0 or m.modes < 0:
        raise UsageError("d, M, T must be positive and modes nonnegative")
    s = cfg.solver
    if s.scheme not in SCHEMES or s.summation not in SUMMATIONS or s.variant not in VARIANTS:
        raise UsageError("unknown scheme, summation or variant")
    if cfg.v2_summation and cfg.v2_summation not in SUMMATIONS:
        raise UsageError(f"unknown summation {cfg.v2_summation!r}")
    if cfg.relabeling not in RELABELINGS:
        raise UsageError(f"unknown relabeling {cfg.relabeling!r}")
    try:
        m.build()
    except UnknownPreset as exc:
        raise UsageError(f"unknown name {exc}") from exc
    except (ConfigurationError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "ywlab_out")


def _write(out: Path, files: dict[str, bytes]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, payload in files.items():
        (out / name).write_bytes(payload)


def _summary(cfg: RunConfig, lines: list[str]) -> bytes:
    head = [f"config_digest: {cfg.digest()}", f"preset: {cfg.model.preset}", f"seed: {cfg.seed}"]
    return ("\n".join(head + lines) + "\n").encode()


# ----------------------------------------------------------------------
# simulate


def _simulate_one(model_cfg: dict, solver: dict, seed: int, index: int, run_digest: str):
    cfg = dict(model_cfg)
    cfg["initial_mean"] = tuple(cfg["initial_mean"])
    model = ModelConfig(**cfg).build()
    b = replace(model.bundle(seed, index), config_digest=run_digest)
    U = SolverSettings(**solver).run(model, b)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["# config_digest", run_digest])
    w.writerow(["t"] + [f"U{k + 1}" for k in range(U.values.shape[1])])
    for t, row in zip(U.grid, U.values):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return serialize(b), buf.getvalue().encode(), len(b.prm)


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    n = cfg.N or 1
    d = cfg.digest()
    jobs = [(cfg.model.to_dict(), asdict(cfg.solver), cfg.seed, i, d) for i in range(n)]
    if args.threads > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_simulate_one, *zip(*jobs)))
    else:
        results = [_simulate_one(*job) for job in jobs]
    files = {}
    atoms = []
    for i, (blob, table, n_atoms) in enumerate(results):
        files[f"bundle_{i:04d}.ywnb"] = blob
        files[f"solution_{i:04d}.csv"] = table
        atoms.append(f"path {i}: {n_atoms} atoms")
    files["summary.txt"] = _summary(cfg, [f"paths: {n}"] + atoms)
    _write(_out_dir(args), files)
    print(d)
    return EXIT_PASS


# ----------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    cfg = _resolve(args)
    report = run_suite(args.suite, cfg.N, cfg.seed)
    d = cfg.digest()
    lines = [f"suite: {args.suite}", f"verdict: {report.verdict.value}"]
    lines += [f"FAILED {c.name}: {c.value!r} (bound {c.bound!r})" for c in report.failures()]
    _write(_out_dir(args), {
        f"verify_{args.suite}.csv": report.to_csv(d).encode(),
        f"verify_{args.suite}.txt": _summary(cfg, lines),
    })
    print(f"{args.suite}: {report.verdict.value}")
    return _EXIT[report.verdict]


# ----------------------------------------------------------------------
# yw


def _table(header, rows, run_digest) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["# config_digest", run_digest])
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def cmd_yw(args) -> int:
    cfg = _resolve(args)
    d = cfg.digest()
    model = cfg.model.build()
    check = args.check
    exp = Experiment(cfg.model, cfg.N or 100, cfg.seed, cfg.solver)
    if check == "pathwise":
        v2 = replace(cfg.solver, summation=cfg.v2_summation) if cfg.v2_summation else cfg.solver
        rows, verdicts = [], []
        for i in range(exp.N):
            r = pathwise_uniqueness_test(model, model.bundle(cfg.seed, i), cfg.solver, v2)
            rows.append([i, repr(r.max_distance), repr(r.d0), r.verdict.value])
            verdicts.append(r.verdict)
        verdict = Verdict.PASS if all(v == Verdict.PASS for v in verdicts) else Verdict.FAIL
        table = _table(["path_index", "max_distance", "d0", "verdict"], rows, d)
        lines = [f"bundles: {exp.N}"]
    elif check == "strong":
        r = strong_solution_check(cfg.model, cfg.seed, exp.N, cfg.solver)
        verdict = r.verdict
        table = _table(["n_bundles", "n_identical", "verdict"], [[r.n_bundles, r.n_identical, r.verdict.value]], d)
        lines = [f"bit-identical: {r.n_identical}/{r.n_bundles}"]
    elif check == "compat":
        N = cfg.N or 1000
        t_cut = cfg.t_cut if cfg.t_cut is not None else float(model.grid[model.grid.size // 2])
        r = compatibility_test(cfg.model, N, t_cut, cfg.solver, cfg.seed)
        verdict = r.verdict
        rows = [[p, f, repr(float(r.correlations[i, j]))]
                for i, p in enumerate(r.past_names) for j, f in enumerate(r.future_names)]
        table = _table(["past_statistic", "future_statistic", "correlation"], rows, d)
        lines = [f"N: {N}", f"threshold: {r.threshold!r}", f"max |correlation|: {r.max_abs!r}"]
    elif check == "law":
        n_a = cfg.N or 100
        n_b = cfg.N_b if cfg.N_b is not None else n_a
        if n_a != n_b:
            raise UsageError(f"ensemble sizes differ ({n_a} vs {n_b})")
        a = Ensemble(exp.seed_for("law-a"), n_a)
        b = Ensemble(exp.seed_for("law-b"), n_b)
        r = law_compare(cfg.model, a, b, solver=cfg.solver, alpha=cfg.alpha)
        verdict = r.verdict
        table = r.to_csv(d).encode()
        lines = [f"alpha: {r.alpha!r}", f"corrected alpha: {r.corrected_alpha!r}", f"skorokhod d0 of median paths: {r.skorokhod!r}"]
    else:
        r = transfer_check(model, model.bundle(cfg.seed, 0), cfg.relabeling, cfg.solver)
        verdict = r.verdict
        table = _table(["relabeling", "max_error", "verdict"], [[r.relabeling, repr(r.max_error), r.verdict.value]], d)
        lines = []
    _write(_out_dir(args), {
        f"yw_{check}.csv": table,
        f"yw_{check}.txt": _summary(cfg, [f"check: {check}", f"verdict: {verdict.value}"] + lines),
    })
    print(f"{check}: {verdict.value}")
    return _EXIT[verdict]


# ----------------------------------------------------------------------
# d0


def read_path_csv(path: str, horizon: float | None = None) -> JumpPath:
    """Rows ``t, x1, ..., xk``; the first row is the value at t = 0.

    Lines starting with ``#`` and a non-numeric header row are skipped.
    """
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in rec])
            except ValueError:
                if rows:
                    raise UsageError(f"{path}: non-numeric row {rec!r}")
    if not rows:
        raise UsageError(f"{path}: no data rows")
    arr = np.array(rows)
    if arr[0, 0] != 0.0:
        raise UsageError(f"{path}: first row must be at t = 0")
    T = float(arr[-1, 0]) if horizon is None else horizon
    return JumpPath(arr[0, 1:], arr[1:, 0], arr[1:, 1:], T)


def cmd_d0(args) -> int:
    try:
        x = read_path_csv(args.path_a, args.horizon)
        y = read_path_csv(args.path_b, args.horizon)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if x.horizon != y.horizon or x.dim != y.dim:
        raise UsageError("paths differ in horizon or dimension")
    print(f"d0 {d0(x, y)!r}")
    print(f"sup {sup_distance(x, y)!r}")
    return EXIT_PASS


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [model], [run] and [intensity NAME] sections")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./ywlab_out)")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--preset", help="model preset (overrides [model] preset)")
    common.add_argument("--N", type=int, help="sample or ensemble size (overrides [run] N)")

    p = argparse.ArgumentParser(prog="ywlab", description="Yamada-Watanabe experiments for SPDEs with Poisson noise.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate bundles and solve")
    s.set_defaults(func=cmd_simulate)
    v = sub.add_parser("verify", parents=[common], help="run a module invariant suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.set_defaults(func=cmd_verify)
    y = sub.add_parser("yw", parents=[common], help="run a Yamada-Watanabe check")
    y.add_argument("check", choices=YW_CHECKS)
    y.add_argument("--variant", help="solver variant (standard, anticipating, ambient)")
    y.set_defaults(func=cmd_yw)
    k = sub.add_parser("d0", help="Skorokhod distance between two path CSV files")
    k.add_argument("path_a")
    k.add_argument("path_b")
    k.add_argument("--horizon", type=float, help="common horizon T (default: last time in the file)")
    k.set_defaults(func=cmd_d0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, UnsupportedConfiguration) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfrastructureError as exc:
        print(f"infrastructure error: {exc}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
