"""Stochastic integrals against a compensated PRM and a truncated Wiener path.

Integrands against the jump measure are step processes: on each partition
cell ``(t_{j-1}, t_j]`` a mark-to-value map ``xi_j``.  The compensator
``int xi_j d nu`` is exact for maps that are polynomial of degree <= 2 in the
mark (from the layer moments) and a Monte Carlo estimate otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measure_core import GammaShellLayer, IntensityMeasure, PointMassLayer, MC_SAMPLES
from .noise import PrmRealization, WienerPath, grid_index, simulate_prm
from .rng import Stream, generator
from .skorokhod import JumpPath

__all__ = [
    "IntegrabilityError",
    "MarkFunction",
    "StepProcess",
    "LevyTriplet",
    "BoundReport",
    "compensator",
    "p_integral",
    "integrate_prm_step",
    "prm_integral_path",
    "prm_integral_jumps",
    "integrate_wiener",
    "levy_from_prm",
    "continuity_bound_report",
    "characteristic_function",
    "haar_projection",
    "l2_distance",
]


class IntegrabilityError(ValueError):
    """The integrand is not integrable against the intensity."""


@dataclass(frozen=True, eq=False)
class MarkFunction:
    """A map from marks (n, d) to values (n, m).

    Polynomial maps ``const + linear @ z + z^T quad z`` carry their
    coefficients so compensators are computed from moments; other maps only
    carry ``fn``.
    """

    out_dim: int
    fn: Callable[[np.ndarray], np.ndarray] | None = None
    const: np.ndarray | None = None
    linear: np.ndarray | None = None
    quad: np.ndarray | None = None

    @classmethod
    def constant(cls, value) -> "MarkFunction":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(v.size, const=v)

    @classmethod
    def affine(cls, linear, const=None) -> "MarkFunction":
        A = np.atleast_2d(np.asarray(linear, dtype=float))
        c = None if const is None else np.atleast_1d(np.asarray(const, dtype=float))
        return cls(A.shape[0], const=c, linear=A)

    @classmethod
    def identity(cls, dim: int = 1) -> "MarkFunction":
        return cls.affine(np.eye(dim))

    @classmethod
    def quadratic(cls, quad, linear=None, const=None) -> "MarkFunction":
        Q = np.asarray(quad, dtype=float)
        if Q.ndim == 2:
            Q = Q[None]
        return cls(
            Q.shape[0],
            const=None if const is None else np.atleast_1d(np.asarray(const, dtype=float)),
            linear=None if linear is None else np.atleast_2d(np.asarray(linear, dtype=float)),
            quad=Q,
        )

    @classmethod
    def general(cls, fn, out_dim: int = 1) -> "MarkFunction":
        return cls(out_dim, fn=fn)

    @property
    def polynomial(self) -> bool:
        return self.fn is None

    def is_zero(self) -> bool:
        if not self.polynomial:
            return False
        return all(c is None or not np.any(c) for c in (self.const, self.linear, self.quad))

    def __call__(self, marks: np.ndarray) -> np.ndarray:
        marks = np.atleast_2d(np.asarray(marks, dtype=float))
        n = marks.shape[0]
        if self.fn is not None:
            return np.asarray(self.fn(marks), dtype=float).reshape(n, self.out_dim)
        out = np.zeros((n, self.out_dim))
        if self.const is not None:
            out += self.const
        if self.linear is not None:
            out += marks @ self.linear.T
        if self.quad is not None:
            out += np.einsum("ni,mij,nj->nm", marks, self.quad, marks)
        return out

    def __add__(self, other: "MarkFunction") -> "MarkFunction":
        if self.polynomial and other.polynomial:

            def add(a, b):
                if a is None:
                    return b
                return a if b is None else a + b

            return MarkFunction(
                self.out_dim, None,
                add(self.const, other.const), add(self.linear, other.linear), add(self.quad, other.quad),
            )
        return MarkFunction.general(lambda z: self(z) + other(z), self.out_dim)


def _mc_draws(layer) -> np.ndarray:
    return layer.sample(generator(0, "compensator-mc", layer.index), MC_SAMPLES)


def compensator(xi: MarkFunction, nu: IntensityMeasure, n_max: int | None = None) -> tuple[np.ndarray, float]:
    """``int xi d nu`` over the instantiated layers and its standard error."""
    total = np.zeros(xi.out_dim)
    var = 0.0
    for layer in nu.instantiated(n_max):
        if layer.mass == 0:
            continue
        if xi.polynomial and layer.has_moments():
            if xi.const is not None:
                total = total + layer.mass * xi.const
            if xi.linear is not None:
                total = total + xi.linear @ layer.mean()
            if xi.quad is not None:
                total = total + np.einsum("mij,ij->m", xi.quad, layer.second())
        elif isinstance(layer, PointMassLayer):
            total = total + layer.weights @ xi(layer.points)
        else:
            vals = xi(_mc_draws(layer))
            total = total + layer.mass * vals.mean(axis=0)
            var += float(np.sum(layer.mass**2 * vals.var(axis=0) / vals.shape[0]))
    if not np.all(np.isfinite(total)):
        raise IntegrabilityError("compensator is not finite")
    return total, math.sqrt(var)


def p_integral(xi: MarkFunction, nu: IntensityMeasure, p: float, n_max: int | None = None) -> float:
    """``int |xi(z)|^p nu(dz)`` with |.| the Euclidean norm."""
    total = 0.0
    for layer in nu.instantiated(n_max):
        if layer.mass == 0:
            continue
        if isinstance(layer, PointMassLayer):
            total += float(layer.weights @ np.linalg.norm(xi(layer.points), axis=1) ** p)
        elif (
            isinstance(layer, GammaShellLayer)
            and xi.polynomial
            and xi.const is None
            and xi.quad is None
            and xi.linear is not None
        ):
            # |A z| = |A[:, 0]| |z| for scalar marks
            total += float(np.linalg.norm(xi.linear[:, 0]) ** p * layer.moment(p))
        elif xi.polynomial and xi.linear is None and xi.quad is None and xi.const is not None:
            total += float(np.linalg.norm(xi.const) ** p * layer.mass)
        else:
            vals = np.linalg.norm(xi(_mc_draws(layer)), axis=1) ** p
            total += layer.mass * float(vals.mean())
    if not math.isfinite(total):
        raise IntegrabilityError("p-th moment of the integrand is not finite")
    return total


@dataclass(frozen=True, eq=False)
class StepProcess:
    """``xi(r, z) = sum_j 1_{(t_{j-1}, t_j]}(r) xi_j(z)``."""

    partition: np.ndarray
    pieces: tuple

    def __post_init__(self):
        part = np.asarray(self.partition, dtype=float)
        if part.ndim != 1 or part.size < 2 or part[0] != 0 or np.any(np.diff(part) <= 0):
            raise ValueError("partition must start at 0 and increase strictly")
        pieces = tuple(self.pieces)
        if len(pieces) != part.size - 1:
            raise ValueError("need one piece per partition cell")
        if len({p.out_dim for p in pieces}) != 1:
            raise ValueError("pieces must share an output dimension")
        object.__setattr__(self, "partition", part)
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def single(cls, piece: MarkFunction, T: float = 1.0) -> "StepProcess":
        return cls(np.array([0.0, T]), (piece,))

    @property
    def out_dim(self) -> int:
        return self.pieces[0].out_dim

    @property
    def horizon(self) -> float:
        return float(self.partition[-1])

    def cell_of(self, times: np.ndarray) -> np.ndarray:
        """Cell index j-1 for times in (t_{j-1}, t_j]."""
        return np.clip(np.searchsorted(self.partition, times, side="left") - 1, 0, len(self.pieces) - 1)

    def __add__(self, other: "StepProcess") -> "StepProcess":
        if not np.array_equal(self.partition, other.partition):
            raise ValueError("step processes must share a partition")
        return StepProcess(self.partition, tuple(a + b for a, b in zip(self.pieces, other.pieces)))

    def values(self, times) -> np.ndarray:
        """Constant pieces evaluated at times (uses a zero mark)."""
        idx = self.cell_of(np.atleast_1d(times))
        zero = np.zeros((1, 1))
        return np.vstack([self.pieces[j](zero)[0] for j in idx])


def _as_step(xi, T: float) -> StepProcess:
    return xi if isinstance(xi, StepProcess) else StepProcess.single(xi, T)


def prm_integral_jumps(xi, eta: PrmRealization) -> tuple[np.ndarray, np.ndarray]:
    """Atom times and the jump ``xi_{j(s)}(z)`` each atom contributes."""
    xi = _as_step(xi, eta.horizon)
    sizes = np.zeros((len(eta), xi.out_dim))
    if len(eta):
        cells = xi.cell_of(eta.times)
        for j in np.unique(cells):
            sel = cells == j
            sizes[sel] = xi.pieces[j](eta.marks[sel])
    return eta.times.copy(), sizes


def prm_integral_path(xi, eta: PrmRealization, nu: IntensityMeasure, times) -> np.ndarray:
    """The compensated integral evaluated at each of ``times``: shape (len(times), m)."""
    xi = _as_step(xi, eta.horizon)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    atom_t, sizes = prm_integral_jumps(xi, eta)
    cum = np.vstack([np.zeros((1, xi.out_dim)), np.cumsum(sizes, axis=0)])
    jumps = cum[np.searchsorted(atom_t, times, side="right")]
    rates = np.vstack([compensator(piece, nu, eta.n_max)[0] for piece in xi.pieces])
    lo = np.minimum(xi.partition[:-1][None, :], times[:, None])
    hi = np.minimum(xi.partition[1:][None, :], times[:, None])
    return jumps - (hi - lo) @ rates


def integrate_prm_step(xi, eta: PrmRealization, nu: IntensityMeasure, t: float) -> np.ndarray:
    """``sum_j int xi_j(z) eta~(dz, (t_{j-1} ∧ t, t_j ∧ t])``."""
    if not 0 <= t <= eta.horizon:
        raise ValueError(f"t={t} outside [0, T]")
    return prm_integral_path(xi, eta, nu, [t])[0]


def integrate_wiener(sig, W: WienerPath, t: float) -> float:
    """Ito sum ``sum_k sum_{t_i <= t} sig(t_{i-1}, k) (beta_k(t_i) - beta_k(t_{i-1}))``.

    ``sig`` is an (M, K) array of left-endpoint coefficients, a callable
    ``sig(t_left) -> (K,)``, or a scalar.
    """
    i = grid_index(W.grid, t)
    inc = W.increments[:i]
    if callable(sig):
        coef = np.array([np.broadcast_to(sig(s), (W.modes,)) for s in W.grid[:i]]).reshape(i, W.modes)
    else:
        coef = np.broadcast_to(np.asarray(sig, dtype=float), W.increments.shape)[:i]
    return float(np.sum(coef * inc))


def levy_from_prm(eta: PrmRealization, nu: IntensityMeasure, t: float) -> np.ndarray:
    """``L(t) = int_0^t int z eta~(dz, ds)``."""
    return integrate_prm_step(MarkFunction.identity(eta.mark_dim), eta, nu, t)


@dataclass(frozen=True)
class BoundReport:
    """Continuity-bound estimate at the horizon plus the empirical constant.

    ``constant`` is the largest ratio over the dyadic times ``T 2^-j``,
    since the bound has to hold at every t, not only at T.
    """

    lhs: float
    rhs: float
    ratio: float
    lhs_se: float
    ratio_se: float
    constant: float = 1.0
    times: tuple = ()
    ratios: tuple = ()


def continuity_bound_report(
    xi,
    nu: IntensityMeasure,
    p: float,
    N: int,
    T: float = 1.0,
    seed: int = 0,
    n_max: int | None = None,
    levels: int = 6,
) -> BoundReport:
    """Monte Carlo ``E|I_t(xi)|^p`` against ``E int_0^t int |xi|^p d nu dr`` for deterministic xi."""
    if not 1.0 <= p <= 2.0:
        raise ValueError("p must lie in [1, 2]")
    if N < 1000:
        raise ValueError("need N >= 1000 samples")
    step = _as_step(xi, T)
    times = T * 2.0 ** -np.arange(levels)[::-1]
    rates = np.array([p_integral(piece, nu, p, n_max) for piece in step.pieces])
    lo = np.minimum(step.partition[:-1][None, :], times[:, None])
    hi = np.minimum(step.partition[1:][None, :], times[:, None])
    rhs = (hi - lo) @ rates
    if not np.all(np.isfinite(rhs)):
        raise IntegrabilityError("right-hand side diverges")
    if all(piece.is_zero() for piece in step.pieces):
        return BoundReport(0.0, 0.0, 1.0, 0.0, 0.0, 1.0, tuple(times), (1.0,) * levels)
    vals = np.empty((N, levels))
    for i in range(N):
        eta = simulate_prm(nu, n_max, T, Stream(seed, i))
        vals[i] = np.linalg.norm(prm_integral_path(step, eta, nu, times), axis=1) ** p
    lhs = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(N)
    ratios = lhs / rhs
    return BoundReport(
        float(lhs[-1]), float(rhs[-1]), float(ratios[-1]), float(se[-1]), float(se[-1] / rhs[-1]),
        float(ratios.max()), tuple(times), tuple(float(r) for r in ratios),
    )


@dataclass(frozen=True, eq=False)
class LevyTriplet:
    """Drift ``m``, Gaussian covariance ``Q`` and jump intensity ``nu``."""

    m: np.ndarray
    Q: np.ndarray
    nu: IntensityMeasure

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (m.size, m.size):
            raise ValueError("Q must be square and match m")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12:
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q), initial=0.0) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if self.nu.n_layers and self.nu.dimension != m.size:
            raise ValueError("nu lives on a different dimension")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "Q", Q)


def characteristic_function(tr: LevyTriplet, x, t: float = 1.0) -> complex:
    """``E exp(i<L(t), x>)`` from the Levy-Khinchine exponent."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    jump = tr.nu.char_exponent(x) if tr.nu.n_layers else 0j
    if not np.isfinite(jump):
        raise IntegrabilityError("Levy-Khinchine integral diverges")
    expo = 1j * float(tr.m @ x) * t - 0.5 * float(x @ tr.Q @ x) * t - t * jump
    val = complex(np.exp(expo))
    if abs(val) > 1.0 + 1e-12:
        raise IntegrabilityError(f"|phi| = {abs(val)} exceeds 1")
    return val


def haar_projection(path: JumpPath, k: int) -> StepProcess:
    """Step process on the dyadic cells of width ``T 2^-k``, each equal to the
    path value at the cell's left endpoint."""
    if k < 0:
        raise ValueError("order must be nonnegative")
    T = path.horizon
    part = T * np.arange(2**k + 1) / 2**k
    part[-1] = T
    vals = path(part[:-1])
    return StepProcess(part, tuple(MarkFunction.constant(v) for v in vals))


def l2_distance(path: JumpPath, step: StepProcess) -> float:
    """Exact ``L^2([0, T])`` distance between a jump path and a step process
    with constant pieces."""
    T = path.horizon
    edges = np.union1d(np.union1d(step.partition, path.times), [0.0, T])
    left, width = edges[:-1], np.diff(edges)
    # step pieces are left-open: evaluate both at an interior point
    mid = left + 0.5 * width
    diff = path(mid) - step.values(mid)
    return float(math.sqrt(np.sum(width * np.sum(diff**2, axis=1))))
