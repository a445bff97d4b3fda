"""Spectral Galerkin solver for the weak-form SPDE

    dU = b(t, U) dt + sigma(t, U) dW + int c(t, z, U) eta~(dz, dt)

on the span of the first ``d`` Dirichlet sine modes of (0, L).  States are
coefficient vectors; the Gelfand triple V ⊂ H ⊂ V' is realized by the
weighted l^2 norms with weights ``mu_k``, 1 and ``1/mu_k``.

The jump coefficient is linear in the mark, ``c(t, z, U) = G(t, U) z``,
which keeps compensators exact (``G @ int z d nu``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft

from .measure_core import IntensityMeasure, PointMassLayer
from .noise import NoiseBundle, PrmRealization, WienerPath, grid_index
from .skorokhod import JumpPath

__all__ = [
    "DivergenceError",
    "UnsupportedConfiguration",
    "GalerkinSpace",
    "Coefficients",
    "SolutionPath",
    "RegularityRegistry",
    "FinitenessReport",
    "ThetaVerdict",
    "solve",
    "gamma_residual",
    "gamma_residuals",
    "mild_heat_oracle",
    "porous_medium_b",
    "finiteness_check",
    "theta_check",
    "l2_v_norm_sq",
    "nonnegativity",
    "SCHEMES",
    "SUMMATIONS",
    "VARIANTS",
]

SCHEMES = ("explicit", "semi_implicit")
SUMMATIONS = ("sequential", "pairwise")
VARIANTS = ("standard", "anticipating", "ambient")


class DivergenceError(ArithmeticError):
    """The discrete solution left the finite numbers."""

    def __init__(self, time: float):
        super().__init__(f"solution blew up at t={time:g}")
        self.time = time


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GalerkinSpace:
    """First ``dim`` eigenpairs of the Dirichlet Laplacian on (0, length)."""

    dim: int
    eigenvalues: np.ndarray
    length: float = 1.0
    n_coll: int = 0

    def __post_init__(self):
        mu = np.asarray(self.eigenvalues, dtype=float)
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if mu.shape != (self.dim,) or np.any(mu <= 0) or np.any(np.diff(mu) < 0):
            raise ValueError("eigenvalues must be positive and nondecreasing")
        object.__setattr__(self, "eigenvalues", mu)
        if self.n_coll == 0:
            object.__setattr__(self, "n_coll", 4 * self.dim)
        if self.n_coll < self.dim:
            raise ValueError("need at least dim collocation points")

    @classmethod
    def dirichlet(cls, dim: int, length: float = 1.0, n_coll: int = 0) -> "GalerkinSpace":
        k = np.arange(1, dim + 1)
        return cls(dim, (k * math.pi / length) ** 2, length, n_coll)

    @property
    def mu(self) -> np.ndarray:
        return self.eigenvalues

    def h_norm(self, u) -> float:
        return float(np.linalg.norm(u))

    def v_norm(self, u) -> float:
        return float(np.sqrt(np.sum(self.mu * np.asarray(u) ** 2)))

    def vprime_norm(self, u) -> float:
        return float(np.sqrt(np.sum(np.asarray(u) ** 2 / self.mu)))

    def pairing(self, f, u) -> float:
        """V'-V duality realized with H^{-1} weights: sum f_k u_k / mu_k."""
        return float(np.sum(np.asarray(f) * np.asarray(u) / self.mu))

    def embedding_constants(self) -> tuple[float, float]:
        """(c1, c2) with |.|_V' <= c1 |.|_H <= c2 |.|_V."""
        c1 = 1.0 / math.sqrt(self.mu[0])
        return c1, c1 / math.sqrt(self.mu[0])

    def nodes(self) -> np.ndarray:
        n = self.n_coll
        return self.length * np.arange(1, n + 1) / (n + 1)

    def to_nodal(self, u) -> np.ndarray:
        padded = np.zeros(self.n_coll)
        padded[: self.dim] = u
        return fft.dst(padded, type=1) * (0.5 * math.sqrt(2.0 / self.length))

    def from_nodal(self, f) -> np.ndarray:
        scale = 0.5 * math.sqrt(2.0 / self.length) * self.length / (self.n_coll + 1)
        return fft.dst(np.asarray(f, dtype=float), type=1)[: self.dim] * scale


def porous_medium_b(u, p_exp: float, space: GalerkinSpace) -> np.ndarray:
    """Pseudo-spectral ``Delta(|u|^{p-2} u)`` on the Galerkin space."""
    if p_exp < 2:
        raise ValueError("porous medium exponent must be >= 2")
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("state is not finite")
    x = space.to_nodal(u)
    f = x if p_exp == 2 else np.abs(x) ** (p_exp - 2.0) * x
    return -space.mu * space.from_nodal(f)


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Drift, diffusion and jump coefficients of the Galerkin system.

    ``linear`` is a diagonal drift ``-linear * U`` kept apart so the
    semi-implicit scheme can treat it implicitly; ``b`` is everything else.
    ``sigma(t, U)`` has shape (d, K) (column k is the image of ``h_k``);
    ``jump(t, U)`` has shape (d, mark_dim).
    """

    dim: int
    linear: np.ndarray | None = None
    b: Callable | None = None
    sigma: Callable | None = None
    jump: Callable | None = None
    modes: int = 0
    mark_dim: int = 1
    p_growth: dict = field(default_factory=dict)

    def drift(self, t, U) -> np.ndarray:
        out = np.zeros(self.dim)
        if self.linear is not None:
            out = out - self.linear * U
        if self.b is not None:
            out = out + self.b(t, U)
        return out

    def nonlinear_drift(self, t, U) -> np.ndarray:
        return np.zeros(self.dim) if self.b is None else np.asarray(self.b(t, U), dtype=float)

    def sigma_at(self, t, U) -> np.ndarray:
        if self.sigma is None:
            return np.zeros((self.dim, 0))
        return np.asarray(self.sigma(t, U), dtype=float).reshape(self.dim, -1)

    def jump_at(self, t, U) -> np.ndarray:
        if self.jump is None:
            return np.zeros((self.dim, self.mark_dim))
        return np.asarray(self.jump(t, U), dtype=float).reshape(self.dim, self.mark_dim)

    def probe(self, states, t: float = 0.0) -> bool:
        """Finite outputs within declared growth bounds on the probe states."""
        for U in states:
            outs = [self.drift(t, U), self.sigma_at(t, U), self.jump_at(t, U)]
            if not all(np.all(np.isfinite(o)) for o in outs):
                return False
            r = 1.0 + np.linalg.norm(U)
            for name, o in zip(("b", "sigma", "c"), outs):
                if name in self.p_growth:
                    C, q = self.p_growth[name]
                    if np.linalg.norm(o) > C * r**q:
                        return False
        return True


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """Galerkin coefficients on the grid; ``values[i]`` holds on [t_i, t_{i+1})."""

    grid: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def at(self, t: float) -> np.ndarray:
        return self.values[grid_index(self.grid, t)]

    def jump_path(self, coords=None) -> JumpPath:
        vals = self.values if coords is None else self.values[:, coords]
        return JumpPath.from_grid(self.grid, vals)

    def equals(self, other: "SolutionPath") -> bool:
        return (
            np.array_equal(self.grid, other.grid)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.jump_times, other.jump_times)
        )


def _tree_sum(rows: list) -> np.ndarray:
    while len(rows) > 1:
        nxt = [rows[i] + rows[i + 1] for i in range(0, len(rows) - 1, 2)]
        if len(rows) % 2:
            nxt.append(rows[-1])
        rows = nxt
    return rows[0]


def _noise_on(bundle: NoiseBundle, grid: np.ndarray) -> WienerPath:
    W = bundle.wiener
    if W.grid.size == grid.size and np.array_equal(W.grid, grid):
        return W
    return W.coarsen(grid)


def _cells(prm: PrmRealization, grid: np.ndarray) -> np.ndarray:
    """Cell i (1-based) with grid[i-1] < s <= grid[i] for each atom time s."""
    return np.searchsorted(grid, prm.times, side="left")


def solve(
    coeffs: Coefficients,
    space: GalerkinSpace,
    bundle: NoiseBundle,
    nu: IntensityMeasure,
    grid=None,
    scheme: str = "explicit",
    summation: str = "sequential",
    variant: str = "standard",
) -> SolutionPath:
    """Left-point Euler-Maruyama step on every grid cell.

    Atoms falling in ``(t_{i-1}, t_i]`` are applied with the state at
    ``t_{i-1}``.  ``scheme="semi_implicit"`` treats the diagonal ``linear``
    drift implicitly.  ``variant`` selects the two negative controls used by
    the harness: ``"anticipating"`` multiplies sigma by the *next* cell's
    Wiener increment, ``"ambient"`` adds a draw from an unseeded generator.
    """
    if scheme not in SCHEMES or summation not in SUMMATIONS or variant not in VARIANTS:
        raise ValueError("unknown scheme, summation or variant")
    grid = bundle.wiener.grid if grid is None else np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ValueError("grid needs at least one cell")
    if grid[-1] != bundle.horizon or grid[0] != 0.0:
        raise ValueError("grid does not span the bundle horizon")
    if scheme == "explicit" and coeffs.linear is not None:
        worst = float(np.max(coeffs.linear) * np.max(np.diff(grid)))
        if worst > 2.0:
            # the amplification factor 1 - mu dt leaves the unit disc
            raise UnsupportedConfiguration(
                f"explicit step unstable (max mu*dt = {worst:.3g} > 2); refine the grid or use semi_implicit"
            )
    W = _noise_on(bundle, grid)
    prm = bundle.prm
    cells = _cells(prm, grid)
    starts = np.searchsorted(cells, np.arange(grid.size + 1), side="left")
    m1 = nu.mean(prm.n_max) if nu.n_layers else np.zeros(coeffs.mark_dim)
    has_comp = bool(np.any(m1))
    ambient = np.random.default_rng() if variant == "ambient" else None
    U = np.asarray(bundle.initial, dtype=float).copy()
    if U.shape != (space.dim,):
        raise ValueError("initial condition has the wrong dimension")
    out = np.empty((grid.size, space.dim))
    out[0] = U
    M = grid.size - 1
    for i in range(1, M + 1):
        t, dt = grid[i - 1], grid[i] - grid[i - 1]
        S = coeffs.sigma_at(t, U)
        K = S.shape[1]
        if K > W.modes:
            raise ValueError("sigma uses more modes than the bundle carries")
        if variant == "anticipating":
            dW = W.increments[i, :K] if i < M else np.zeros(K)
        else:
            dW = W.increments[i - 1, :K]
        lo, hi = starts[i], starts[i + 1]
        need_G = hi > lo or has_comp
        G = coeffs.jump_at(t, U) if need_G else None
        if scheme == "explicit":
            terms = [U, coeffs.drift(t, U) * dt]
        else:
            terms = [U, coeffs.nonlinear_drift(t, U) * dt]
        if K:
            terms.append(S @ dW)
        for j in range(lo, hi):
            terms.append(G @ prm.marks[j])
        if has_comp:
            terms.append(-dt * (G @ m1))
        if ambient is not None:
            terms.append(ambient.normal(scale=1e-6, size=space.dim))
        if summation == "sequential":
            new = terms[0].copy()
            for term in terms[1:]:
                new = new + term
        else:
            new = _tree_sum(terms)
        if scheme == "semi_implicit" and coeffs.linear is not None:
            new = new / (1.0 + coeffs.linear * dt)
        if not np.all(np.isfinite(new)):
            raise DivergenceError(float(grid[i]))
        out[i] = U = new
    return SolutionPath(grid.copy(), out, prm.times.copy())


def _increment_terms(U: SolutionPath, bundle: NoiseBundle, coeffs: Coefficients, nu: IntensityMeasure, scheme: str):
    """Per-cell contributions (M, d) to <U(t), phi_k> for every basis vector."""
    grid = U.grid
    W = _noise_on(bundle, grid)
    prm = bundle.prm
    M = grid.size - 1
    m1 = nu.mean(prm.n_max) if nu.n_layers else np.zeros(coeffs.mark_dim)
    drift = np.empty((M, coeffs.dim))
    diff = np.zeros((M, coeffs.dim))
    comp = np.empty((M, coeffs.dim))
    jumps = np.zeros((M, coeffs.dim))
    cells = _cells(prm, grid)
    for i in range(1, M + 1):
        t, dt = grid[i - 1], grid[i] - grid[i - 1]
        x = U.values[i - 1]
        if scheme == "explicit" or coeffs.linear is None:
            drift[i - 1] = coeffs.drift(t, x) * dt
        else:
            drift[i - 1] = (coeffs.nonlinear_drift(t, x) - coeffs.linear * U.values[i]) * dt
        S = coeffs.sigma_at(t, x)
        if S.shape[1]:
            diff[i - 1] = S @ W.increments[i - 1, : S.shape[1]]
        G = coeffs.jump_at(t, x)
        comp[i - 1] = dt * (G @ m1)
        sel = cells == i
        if sel.any():
            jumps[i - 1] = (prm.marks[sel] @ G.T).sum(axis=0)
    return drift, diff, jumps, comp


def gamma_residuals(
    U: SolutionPath, bundle: NoiseBundle, coeffs: Coefficients, nu: IntensityMeasure, scheme: str = "explicit"
) -> np.ndarray:
    """Residual of the weak form for every (grid time, basis vector): shape (M+1, d)."""
    drift, diff, jumps, comp = _increment_terms(U, bundle, coeffs, nu, scheme)
    acc = np.zeros_like(U.values)
    acc[1:] = np.cumsum(drift + diff + jumps - comp, axis=0)
    return bundle.initial[None, :] + acc - U.values


def gamma_residual(
    U: SolutionPath,
    bundle: NoiseBundle,
    coeffs: Coefficients,
    space: GalerkinSpace,
    nu: IntensityMeasure,
    k: int,
    t: float,
    scheme: str = "explicit",
) -> float:
    """``<U0, phi_k> + int <b, phi_k> + int <sigma, phi_k> dW + int int <c, phi_k> d eta~ - <U(t), phi_k>``.

    ``k`` is 1-based.  Terms are summed with ``math.fsum``.
    """
    if not 1 <= k <= space.dim:
        raise IndexError(f"basis index {k} outside 1..{space.dim}")
    i = grid_index(U.grid, t)
    drift, diff, jumps, comp = _increment_terms(U, bundle, coeffs, nu, scheme)
    c = k - 1
    parts = [bundle.initial[c], -U.values[i, c]]
    parts += list(drift[:i, c]) + list(diff[:i, c]) + list(jumps[:i, c]) + list(-comp[:i, c])
    return math.fsum(parts)


def mild_heat_oracle(
    space: GalerkinSpace,
    prm: PrmRealization,
    nu: IntensityMeasure,
    grid,
    jump_matrix=None,
) -> SolutionPath:
    """Exact-in-time solution of ``dX = -mu X dt + int G z eta~(dz, dt)``, X(0) = 0.

    ``X_k(t) = sum_{t_i <= t} e^{-mu_k (t - t_i)} (G z_i)_k
               - (1 - e^{-mu_k t}) / mu_k (G int z d nu)_k``.
    """
    grid = np.asarray(grid, dtype=float)
    G = np.eye(space.dim, prm.mark_dim) if jump_matrix is None else np.asarray(jump_matrix, dtype=float)
    truncated = prm.n_max is not None and prm.n_max < nu.n_layers
    if not nu.symmetric and truncated:
        raise UnsupportedConfiguration("asymmetric intensity with discarded layers has no exact compensator")
    mu = space.mu
    jumps = prm.marks @ G.T
    vals = np.zeros((grid.size, space.dim))
    for i, t in enumerate(grid):
        sel = prm.times <= t
        if sel.any():
            vals[i] = np.sum(np.exp(-mu[None, :] * (t - prm.times[sel, None])) * jumps[sel], axis=0)
    m1 = nu.mean(prm.n_max) if nu.n_layers else np.zeros(prm.mark_dim)
    drift = G @ m1
    if np.any(drift):
        vals -= (1.0 - np.exp(-mu[None, :] * grid[:, None])) / mu[None, :] * drift[None, :]
    return SolutionPath(grid, vals, prm.times.copy())


@dataclass(frozen=True)
class FinitenessReport:
    drift_l1: float
    diffusion_l2: float
    small_jump: float
    large_jump: float
    finite: bool
    split_masses: np.ndarray
    layer_masses: np.ndarray


def _split_moments(layer, row: np.ndarray, p: float) -> tuple[float, float, float, float]:
    """For g = row: (nu{|g.z|<1}, nu{|g.z|>=1}, int_{<1}|g.z|^p, int_{>=1}|g.z|) on one layer."""
    gnorm = float(np.linalg.norm(row))
    if gnorm == 0.0:
        return layer.mass, 0.0, 0.0, 0.0
    if isinstance(layer, PointMassLayer):
        v = np.abs(layer.points @ row)
        small = v < 1.0
        w = layer.weights
        return (
            float(w[small].sum()), float(w[~small].sum()),
            float(np.sum(w[small] * v[small] ** p)), float(np.sum(w[~small] * v[~small])),
        )
    if layer.dimension == 1:
        thr = 1.0 / gnorm
        return (
            layer.radial_moment(0.0, 0.0, thr), layer.radial_moment(0.0, thr, math.inf),
            gnorm**p * layer.radial_moment(p, 0.0, thr), gnorm * layer.radial_moment(1.0, thr, math.inf),
        )
    raise UnsupportedConfiguration("jump split needs scalar marks or point masses")


def finiteness_check(
    U: SolutionPath, coeffs: Coefficients, nu: IntensityMeasure, space: GalerkinSpace, p: float = 2.0,
    n_max: int | None = None,
) -> FinitenessReport:
    """The four integrals of the weak-solution finiteness condition, per basis
    vector, evaluated along the path at the horizon; reports the max over k."""
    grid, vals = U.grid, U.values
    d = space.dim
    layers = nu.instantiated(n_max)
    drift = np.zeros(d)
    diff = np.zeros(d)
    small = np.zeros(d)
    large = np.zeros(d)
    split0 = np.zeros((d, len(layers), 2))
    finite = bool(np.all(np.isfinite(vals)))
    if finite:
        for i in range(1, grid.size):
            t, dt, x = grid[i - 1], grid[i] - grid[i - 1], vals[i - 1]
            drift += np.abs(coeffs.drift(t, x)) * dt
            S = coeffs.sigma_at(t, x)
            diff += np.sum(S**2, axis=1) * dt
            G = coeffs.jump_at(t, x)
            for k in range(d):
                for li, layer in enumerate(layers):
                    ms, ml, ps, pl = _split_moments(layer, G[k], p)
                    small[k] += ps * dt
                    large[k] += pl * dt
                    if i == 1:
                        split0[k, li] = ms, ml
    tot = [float(np.max(a)) if finite else math.inf for a in (drift, diff, small, large)]
    finite = finite and all(math.isfinite(v) for v in tot)
    return FinitenessReport(*tot, finite, split0, np.array([l.mass for l in layers]))


@dataclass(frozen=True, eq=False)
class RegularityRegistry:
    """theta0: functionals with budget R on the ensemble mean; theta1: {0, inf} predicates."""

    theta0: tuple = ()
    theta1: tuple = ()
    R: float = math.inf


@dataclass(frozen=True)
class ThetaVerdict:
    member: bool
    theta0_means: tuple
    theta1_finite: tuple


def theta_check(paths, reg: RegularityRegistry) -> ThetaVerdict:
    """Membership of an ensemble in the regularity set (expectation -> ensemble mean)."""
    paths = list(paths)
    means = tuple(float(np.mean([f(u) for u in paths])) if paths else 0.0 for f in reg.theta0)
    finite = tuple(all(math.isfinite(f(u)) for u in paths) for f in reg.theta1)
    member = all(m <= reg.R for m in means) and all(finite)
    return ThetaVerdict(member, means, finite)


def l2_v_norm_sq(space: GalerkinSpace) -> Callable[[SolutionPath], float]:
    """``||U||^2_{L^2(0,T;V)}`` by the left-point rule on the grid."""

    def theta(U: SolutionPath) -> float:
        dt = np.diff(U.grid)
        return float(np.sum(dt * np.sum(space.mu * U.values[:-1] ** 2, axis=1)))

    return theta


def nonnegativity(space: GalerkinSpace) -> Callable[[SolutionPath], float]:
    """0 if every nodal value is >= 0 at every grid time, else inf."""

    def theta(U: SolutionPath) -> float:
        for v in U.values:
            if np.any(space.to_nodal(v) < 0):
                return math.inf
        return 0.0

    return theta
