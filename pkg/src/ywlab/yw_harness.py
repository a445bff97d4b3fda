"""Executable Yamada-Watanabe checks.

Pathwise uniqueness is exercised as determinism under identical noise plus
stability under implementation-equivalent solver variants.  Strong-solution
functionality is exercised by re-solving a serialized bundle in a freshly
spawned interpreter.  Temporal compatibility is a correlation screen between
past-measurable statistics of the solution and future noise.  Uniqueness in
law is a two-ensemble Kolmogorov-Smirnov comparison with a Bonferroni
correction.

Every ensemble member is simulated from its own substream ``(master_seed,
path_index)``, so results never depend on how members are spread over
worker processes.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import stats

from .measure_core import ConfigurationError
from .models import ModelConfig, Model
from .noise import (
    BundleDecodeError,
    NoiseBundle,
    PrmRealization,
    WienerPath,
    deserialize,
    digest,
    grid_index,
    serialize,
)
from .rng import generator
from .skorokhod import d0
from .spde_solver import SolutionPath, solve

__all__ = [
    "Verdict",
    "InfrastructureError",
    "SolverSettings",
    "StatisticRegistry",
    "Experiment",
    "Ensemble",
    "PathwiseReport",
    "StrongReport",
    "CompatibilityReport",
    "StatisticRow",
    "LawComparisonReport",
    "TransferReport",
    "RELABELINGS",
    "TRANSFORMS",
    "MIN_STATISTICAL_N",
    "MIN_COMPAT_N",
    "pathwise_uniqueness_test",
    "initial_contraction",
    "strong_solution_check",
    "compatibility_test",
    "ensemble_statistics",
    "law_compare",
    "null_calibration",
    "transfer_check",
    "relabel",
]

MIN_STATISTICAL_N = 100
MIN_COMPAT_N = 1000
RELABELINGS = ("identity", "sign_flip", "mode_swap")
TRANSFORMS = ("none", "reverse_marks")
# presets whose solution is affine in the noise: U = U_det + (noise-driven part)
_AFFINE_PRESETS = ("zero", "identity", "heat", "heat_jump", "pure_jump")


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class InfrastructureError(RuntimeError):
    """The check could not be carried out (distinct from a failing verdict)."""


@dataclass(frozen=True)
class SolverSettings:
    scheme: str = "explicit"
    summation: str = "sequential"
    variant: str = "standard"

    def run(self, model: Model, bundle: NoiseBundle) -> SolutionPath:
        return solve(
            model.coeffs, model.space, bundle, model.nu,
            scheme=self.scheme, summation=self.summation, variant=self.variant,
        )


@dataclass(frozen=True)
class StatisticRegistry:
    """Marginal times (fractions of T), 1-based coordinates and path functionals.

    Empty tuples mean the defaults: times T/4, T/2, T and coordinates 1, 2, d.
    """

    times: tuple = ()
    coords: tuple = ()
    functionals: tuple = ("sup_norm", "l2_time")

    def resolve(self, model: Model) -> list[tuple[str, object]]:
        d, M = model.space.dim, model.grid.size - 1
        times = self.times or (0.25, 0.5, 1.0)
        coords = self.coords or tuple(dict.fromkeys(k for k in (1, 2, d) if k <= d))
        out = []
        for frac in times:
            i = int(round(frac * M))
            for k in coords:
                out.append((f"U{k}(t={model.grid[i]:.6g})", (i, k - 1)))
        for name in self.functionals:
            if name not in ("sup_norm", "l2_time"):
                raise ConfigurationError(f"unknown functional {name!r}")
            out.append((name, name))
        return out


def _evaluate(U: SolutionPath, spec) -> float:
    if spec == "sup_norm":
        return float(np.max(np.linalg.norm(U.values, axis=1)))
    if spec == "l2_time":
        # the path is constant on each cell
        return float(np.sum(np.diff(U.grid) * np.sum(U.values[:-1] ** 2, axis=1)))
    i, k = spec
    return float(U.values[i, k])


@dataclass(frozen=True)
class Experiment:
    config: ModelConfig
    N: int = MIN_STATISTICAL_N
    master_seed: int = 0
    solver: SolverSettings = SolverSettings()
    statistics: StatisticRegistry = StatisticRegistry()

    @property
    def statistical(self) -> bool:
        return self.N >= MIN_STATISTICAL_N

    def digest(self) -> str:
        return digest({
            "config": self.config.to_dict(), "N": self.N, "master_seed": self.master_seed,
            "solver": asdict(self.solver), "statistics": asdict(self.statistics),
        })

    def seed_for(self, purpose: str, rep: int = 0) -> int:
        """Derived master seed for one ensemble of this experiment."""
        return int(generator(self.master_seed, "experiment", rep, _purpose_key(purpose)).integers(2**62))


def _purpose_key(purpose: str) -> int:
    return int.from_bytes(purpose.encode()[:8].ljust(8, b"\0"), "little")


@dataclass(frozen=True)
class Ensemble:
    """``size`` bundles drawn from ``master_seed`` with path indices 0..size-1."""

    master_seed: int
    size: int
    config: ModelConfig | None = None
    transform: str = "none"


# ----------------------------------------------------------------------
# bundle transformations


def relabel(bundle: NoiseBundle, relabeling: str, modes=(0, 1)) -> NoiseBundle:
    """Law-preserving relabeling of a bundle (see ``RELABELINGS``)."""
    if relabeling == "identity":
        return bundle
    prm, w = bundle.prm, bundle.wiener
    if relabeling == "sign_flip":
        prm = replace(prm, marks=-prm.marks)
    elif relabeling == "mode_swap":
        i, j = modes
        if max(i, j) >= w.modes:
            raise ConfigurationError("mode swap needs at least two Wiener modes")
        perm = np.arange(w.modes)
        perm[[i, j]] = perm[[j, i]]
        w = WienerPath(w.grid, w.increments[:, perm])
    else:
        raise ConfigurationError(f"relabeling {relabeling!r} is not registered")
    return replace(bundle, wiener=w, prm=prm)


def _transform(bundle: NoiseBundle, name: str) -> NoiseBundle:
    if name == "none":
        return bundle
    if name == "reverse_marks":
        prm = bundle.prm
        return replace(bundle, prm=replace(prm, marks=prm.marks[::-1], layers=prm.layers[::-1]))
    raise ConfigurationError(f"unknown transform {name!r}")


def _without_atoms(bundle: NoiseBundle) -> NoiseBundle:
    prm = bundle.prm
    empty = PrmRealization(
        np.empty(0), np.empty((0, prm.mark_dim)), np.empty(0, dtype=np.int64), prm.horizon,
        prm.intensity_ref, prm.n_max, prm.start, prm.truncation_bound,
    )
    return replace(bundle, prm=empty)


# ----------------------------------------------------------------------
# pathwise uniqueness


@dataclass(frozen=True)
class PathwiseReport:
    max_distance: float
    d0: float
    tolerance: float
    verdict: Verdict


def pathwise_uniqueness_test(
    model: Model,
    bundle: NoiseBundle,
    v1: SolverSettings = SolverSettings(),
    v2: SolverSettings = SolverSettings(),
    tol: float = 1e-10,
    other_bundle: NoiseBundle | None = None,
) -> PathwiseReport:
    """Solve twice on one bundle and measure how far the two paths are apart."""
    if other_bundle is not None and not other_bundle.equals(bundle):
        raise ConfigurationError("pathwise uniqueness needs the identical bundle for both solves")
    U1, U2 = v1.run(model, bundle), v2.run(model, bundle)
    if not np.array_equal(U1.grid, U2.grid):
        raise ConfigurationError("solver variants use different grids")
    dist = float(np.max(np.linalg.norm(U1.values - U2.values, axis=1)))
    skor = d0(U1.jump_path(), U2.jump_path()) if dist > 0 else 0.0
    limit = 1e-12 if v1 == v2 else tol
    ok = dist <= limit and skor <= limit
    return PathwiseReport(dist, skor, limit, Verdict.PASS if ok else Verdict.FAIL)


def initial_contraction(model: Model, bundle: NoiseBundle, other_initial, solver=SolverSettings()) -> float:
    """|U(T) - U'(T)| / |U0 - U0'| for two initial conditions on one bundle."""
    other = replace(bundle, initial=np.asarray(other_initial, dtype=float))
    a, b = solver.run(model, bundle), solver.run(model, other)
    return float(np.linalg.norm(a.final - b.final) / np.linalg.norm(bundle.initial - other.initial))


# ----------------------------------------------------------------------
# strong solution: U = F(W, eta, U0)


@dataclass(frozen=True)
class StrongReport:
    n_bundles: int
    n_identical: int
    verdict: Verdict


def _resolve_serialized(config: dict, solver: dict, blobs: list[bytes]) -> list[bytes]:
    # runs in a fresh interpreter: everything is rebuilt from plain data
    cfg = dict(config)
    cfg["initial_mean"] = tuple(cfg["initial_mean"])
    model = ModelConfig(**cfg).build()
    settings = SolverSettings(**solver)
    out = []
    for blob in blobs:
        U = settings.run(model, deserialize(blob))
        out.append(U.grid.tobytes() + U.values.tobytes())
    return out


def strong_solution_check(
    config: ModelConfig,
    master_seed: int = 0,
    n_bundles: int = 100,
    solver: SolverSettings = SolverSettings(),
) -> StrongReport:
    """Re-solve serialized bundles in a spawned process and compare bit for bit."""
    model = config.build()
    blobs, local = [], []
    for i in range(n_bundles):
        b = model.bundle(master_seed, i)
        blob = serialize(b)
        try:
            back = deserialize(blob)
        except BundleDecodeError as exc:
            raise InfrastructureError(f"bundle {i} does not survive serialization") from exc
        if not back.equals(b):
            raise InfrastructureError(f"bundle {i} changed under serialization")
        blobs.append(blob)
        U = solver.run(model, b)
        local.append(U.grid.tobytes() + U.values.tobytes())
    ctx = multiprocessing.get_context("spawn")
    try:
        with ProcessPoolExecutor(max_workers=1, mp_context=ctx) as pool:
            remote = pool.submit(_resolve_serialized, config.to_dict(), asdict(solver), blobs).result()
    except BundleDecodeError as exc:
        raise InfrastructureError("fresh process could not decode a bundle") from exc
    same = sum(a == b for a, b in zip(local, remote))
    return StrongReport(n_bundles, same, Verdict.PASS if same == n_bundles else Verdict.FAIL)


# ----------------------------------------------------------------------
# temporal compatibility


@dataclass(frozen=True)
class CompatibilityReport:
    past_names: tuple
    future_names: tuple
    correlations: np.ndarray
    threshold: float
    N: int
    verdict: Verdict

    @property
    def max_abs(self) -> float:
        c = self.correlations
        return float(np.nanmax(np.abs(c))) if c.size and not np.all(np.isnan(c)) else 0.0


def _past_stats(U: SolutionPath, i: int, coords) -> list[float]:
    u = U.values[i]
    return [float(u[k - 1]) for k in coords] + [float(u @ u)]


def _future_stats(bundle: NoiseBundle, i: int, t: float, n_layers: int) -> list[float]:
    inc = bundle.wiener.increments
    out = []
    for m in range(inc.shape[1]):
        out += [float(inc[i, m]), float(inc[i:, m].sum())]
    after = bundle.prm.layers[bundle.prm.times > t]
    out += [float(np.sum(after == n)) for n in range(1, n_layers + 1)]
    return out


def compatibility_test(
    config: ModelConfig,
    N: int,
    t_cut: float,
    solver: SolverSettings = SolverSettings(),
    master_seed: int = 0,
    coords: tuple = (),
) -> CompatibilityReport:
    """Correlations between statistics of U(t) and the noise after t."""
    model = config.build()
    i = grid_index(model.grid, t_cut)
    d = model.space.dim
    coords = coords or tuple(dict.fromkeys(k for k in (1, 2, d) if k <= d))
    n_layers = model.nu.n_layers if config.n_max is None else min(config.n_max, model.nu.n_layers)
    past_names = tuple(f"U{k}(t)" for k in coords) + ("|U(t)|^2",)
    K = max(config.modes, 1)
    future_names = tuple(
        name for m in range(1, K + 1) for name in (f"dW{m}[first]", f"W{m}(T)-W{m}(t)")
    ) + tuple(f"N_layer{n}(t,T]" for n in range(1, n_layers + 1))
    threshold = 4.0 / math.sqrt(N)
    verdict_if_ok = Verdict.PASS if N >= MIN_COMPAT_N else Verdict.INCONCLUSIVE
    if i == model.grid.size - 1:
        empty = np.empty((len(past_names), 0))
        return CompatibilityReport(past_names, (), empty, threshold, N, verdict_if_ok)
    P = np.empty((N, len(past_names)))
    F = np.empty((N, len(future_names)))
    for j in range(N):
        b = model.bundle(master_seed, j)
        U = solver.run(model, b)
        P[j] = _past_stats(U, i, coords)
        F[j] = _future_stats(b, i, t_cut, n_layers)
    C = _cross_correlation(P, F)
    ok = not np.any(np.abs(C[~np.isnan(C)]) >= threshold)
    verdict = verdict_if_ok if ok else (Verdict.FAIL if N >= MIN_COMPAT_N else Verdict.INCONCLUSIVE)
    return CompatibilityReport(past_names, future_names, C, threshold, N, verdict)


def _cross_correlation(P: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Pearson correlations; NaN where either column is constant."""
    Pc, Fc = P - P.mean(axis=0), F - F.mean(axis=0)
    sp, sf = np.sqrt((Pc**2).sum(axis=0)), np.sqrt((Fc**2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        C = (Pc.T @ Fc) / np.outer(sp, sf)
    C[(sp == 0)[:, None] | (sf == 0)[None, :]] = np.nan
    return C


# ----------------------------------------------------------------------
# law comparison


def _ensemble_chunk(config: dict, solver: dict, registry: dict, seed: int, transform: str, indices: list[int]):
    cfg = dict(config)
    cfg["initial_mean"] = tuple(cfg["initial_mean"])
    model = ModelConfig(**cfg).build()
    settings = SolverSettings(**solver)
    specs = StatisticRegistry(**registry).resolve(model)
    rows = []
    for j in indices:
        U = settings.run(model, _transform(model.bundle(seed, j), transform))
        rows.append([_evaluate(U, s) for _, s in specs])
    return rows


def ensemble_statistics(
    config: ModelConfig,
    ensemble: Ensemble,
    solver: SolverSettings = SolverSettings(),
    registry: StatisticRegistry = StatisticRegistry(),
    threads: int = 1,
) -> tuple[list[str], np.ndarray]:
    """Registered statistics for every member, rows in path-index order."""
    cfg = ensemble.config or config
    if ensemble.transform not in TRANSFORMS:
        raise ConfigurationError(f"unknown transform {ensemble.transform!r}")
    names = [n for n, _ in registry.resolve(cfg.build())]
    args = (cfg.to_dict(), asdict(solver), asdict(registry), ensemble.master_seed, ensemble.transform)
    idx = list(range(ensemble.size))
    if threads <= 1 or ensemble.size < 2:
        rows = _ensemble_chunk(*args, idx)
    else:
        chunks = [idx[k::threads] for k in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_ensemble_chunk, *zip(*[args + (c,) for c in chunks])))
        rows = [None] * ensemble.size
        for c, part in zip(chunks, parts):
            for j, r in zip(c, part):
                rows[j] = r
    return names, np.asarray(rows, dtype=float).reshape(ensemble.size, len(names))


@dataclass(frozen=True)
class StatisticRow:
    statistic: str
    n_a: int
    n_b: int
    distance: float
    p_value: float


@dataclass(frozen=True)
class LawComparisonReport:
    rows: tuple
    alpha: float
    skorokhod: float | None
    reject: bool
    inconclusive: bool = False

    @property
    def corrected_alpha(self) -> float:
        return self.alpha / max(len(self.rows), 1)

    @property
    def verdict(self) -> Verdict:
        if self.inconclusive:
            return Verdict.INCONCLUSIVE
        return Verdict.FAIL if self.reject else Verdict.PASS

    def to_csv(self, config_digest: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# config_digest", config_digest])
        w.writerow(["statistic", "n_a", "n_b", "ks_distance", "p_value", "verdict"])
        cut = self.corrected_alpha
        for r in self.rows:
            w.writerow([r.statistic, r.n_a, r.n_b, repr(r.distance), repr(r.p_value),
                        "reject" if r.p_value < cut else "accept"])
        return buf.getvalue()


def law_compare(
    config: ModelConfig,
    a: Ensemble,
    b: Ensemble,
    registry: StatisticRegistry = StatisticRegistry(),
    solver: SolverSettings = SolverSettings(),
    alpha: float = 0.01,
    threads: int = 1,
    skorokhod: bool = True,
) -> LawComparisonReport:
    """Two-sample KS per registered statistic, Bonferroni-corrected."""
    if a.size != b.size:
        raise ConfigurationError(f"ensemble sizes differ ({a.size} vs {b.size})")
    if a.master_seed == b.master_seed and a.config == b.config and a.transform == b.transform:
        raise ConfigurationError("ensembles share a substream family")
    names, A = ensemble_statistics(config, a, solver, registry, threads)
    _, B = ensemble_statistics(config, b, solver, registry, threads)
    rows = []
    for j, name in enumerate(names):
        res = stats.ks_2samp(A[:, j], B[:, j])
        rows.append(StatisticRow(name, a.size, b.size, float(res.statistic), float(res.pvalue)))
    cut = alpha / len(rows)
    reject = any(r.p_value < cut for r in rows)
    skor = None
    if skorokhod and "sup_norm" in names:
        j = names.index("sup_norm")
        skor = d0(_median_path(config, a, solver, A[:, j]), _median_path(config, b, solver, B[:, j]))
    return LawComparisonReport(tuple(rows), alpha, skor, reject, a.size < MIN_STATISTICAL_N)


def _median_path(config: ModelConfig, ens: Ensemble, solver: SolverSettings, values: np.ndarray):
    # member at the median of the sup-norm statistic; lowest index on ties
    order = np.argsort(values, kind="stable")
    j = int(order[(values.size - 1) // 2])
    model = (ens.config or config).build()
    return solver.run(model, _transform(model.bundle(ens.master_seed, j), ens.transform)).jump_path()


def null_calibration(
    config: ModelConfig,
    repetitions: int = 100,
    N: int = MIN_STATISTICAL_N,
    master_seed: int = 0,
    alpha: float = 0.01,
    registry: StatisticRegistry = StatisticRegistry(),
) -> int:
    """Number of rejections of identically configured ensemble pairs."""
    exp = Experiment(config, N, master_seed)
    rejections = 0
    for r in range(repetitions):
        a = Ensemble(exp.seed_for("null-a", r), N)
        b = Ensemble(exp.seed_for("null-b", r), N)
        rejections += law_compare(config, a, b, registry, alpha=alpha, skorokhod=False).reject
    return rejections


# ----------------------------------------------------------------------
# transfer under law-preserving relabelings


@dataclass(frozen=True)
class TransferReport:
    relabeling: str
    max_error: float
    verdict: Verdict


def transfer_check(
    model: Model,
    bundle: NoiseBundle,
    relabeling: str,
    solver: SolverSettings = SolverSettings(),
    tol: float = 1e-12,
) -> TransferReport:
    """Check the pushforward relation between solutions on original and relabeled noise."""
    if relabeling not in RELABELINGS:
        raise ConfigurationError(f"relabeling {relabeling!r} is not registered")
    U = solver.run(model, bundle).values
    if relabeling == "sign_flip":
        if not model.nu.symmetric:
            raise ConfigurationError("sign flip is law-preserving only for symmetric intensities")
        if model.config.preset not in _AFFINE_PRESETS:
            raise ConfigurationError("sign flip relation needs noise-affine dynamics")
        flipped = solver.run(model, relabel(bundle, relabeling)).values
        det = solver.run(model, _without_atoms(bundle)).values
        err = float(np.max(np.abs(U + flipped - 2.0 * det)))
        scale = max(1.0, float(np.max(np.abs(U))))
        ok = err <= tol * scale
    else:
        other = solver.run(model, relabel(bundle, relabeling)).values
        err = float(np.max(np.abs(U - other)))
        ok = err == 0.0
    return TransferReport(relabeling, err, Verdict.PASS if ok else Verdict.FAIL)
