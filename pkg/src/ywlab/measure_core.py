"""Sigma-finite intensity measures as ladders of finite layers.

A jump intensity ``nu`` on a mark space R^d is stored as disjoint layers
``L_n = S_n \\ S_{n-1}`` with ``S_1 ⊂ S_2 ⊂ ...``.  Each layer knows its mass,
how to draw normalized marks from itself and (when available) its moments.
Infinite total mass is never instantiated; only the ladder is.

Counting measures are finite atom lists tagged with the layer they fell
into, and :func:`d_S` is the two-level bounded metric on them.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

__all__ = [
    "ConfigurationError",
    "IncompatibleLadderError",
    "PointMassLayer",
    "GammaShellLayer",
    "SampledLayer",
    "IntensityMeasure",
    "CountingMeasure",
    "SeparatingFamily",
    "IntegrabilityReport",
    "cumulative_mass",
    "levy_integrability",
    "restrict",
    "d_S",
    "default_family",
    "check_symmetry",
    "upper_gamma",
    "load_registry",
    "builtin_registry",
]

MC_SAMPLES = 100_000


class ConfigurationError(ValueError):
    """A measure or layer lacks the data an operation needs."""


class IncompatibleLadderError(ValueError):
    """Two counting measures live on different layer ladders."""


def upper_gamma(s: float, x: float) -> float:
    """Unregularized upper incomplete gamma function for any real ``s``, x > 0."""
    if math.isinf(x):
        return 0.0
    if s > 0:
        return float(special.gamma(s) * special.gammaincc(s, x))
    if s == 0:
        return float(special.exp1(x))
    # Gamma(s, x) = (Gamma(s + 1, x) - x^s e^-x) / s
    return (upper_gamma(s + 1.0, x) - x**s * math.exp(-x)) / s


def _gamma_segment(s: float, a: float, b: float) -> float:
    """Integral of r^(s-1) e^-r over [a, b)."""
    if b <= a:
        return 0.0
    if s > 0 and b < 1.0:
        return float(special.gamma(s) * (special.gammainc(s, b) - special.gammainc(s, a)))
    return upper_gamma(s, a) - upper_gamma(s, b)


class _Layer:
    """Shared behaviour for layer specifications."""

    index: int
    dimension: int
    symmetric: bool

    @property
    def mass(self) -> float:  # pragma: no cover - overridden
        raise NotImplementedError

    @property
    def sampler_id(self) -> str:  # pragma: no cover - overridden
        raise NotImplementedError

    def has_sampler(self) -> bool:
        return True

    def has_moments(self) -> bool:
        return True

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def contains(self, marks: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def radial_moment(self, p: float, lo: float = 0.0, hi: float = math.inf) -> float:  # pragma: no cover
        raise NotImplementedError

    def moment(self, p: float) -> float:
        """Integral of |z|^p over the layer."""
        return self.radial_moment(p)

    def truncated_moment(self, p: float) -> float:
        """Integral of min(1, |z|^p) over the layer."""
        return self.radial_moment(p, 0.0, 1.0) + self.radial_moment(0.0, 1.0, math.inf)

    def mean(self) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def second(self) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def char_exponent(self, x: np.ndarray) -> complex:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class PointMassLayer(_Layer):
    """Finitely many weighted atoms ``sum_i w_i delta_{z_i}``."""

    index: int
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def symmetric(self) -> bool:
        for z, w in zip(self.points, self.weights):
            hit = np.all(np.isclose(self.points, -z, rtol=0, atol=1e-12), axis=1)
            if not np.isclose(self.weights[hit].sum(), w):
                return False
        return True

    @property
    def sampler_id(self) -> str:
        return f"points(n={len(self.weights)})"

    def sample(self, rng, n):
        if n == 0:
            return np.empty((0, self.dimension))
        idx = rng.choice(len(self.weights), size=n, p=self.weights / self.weights.sum())
        return self.points[idx].copy()

    def contains(self, marks):
        marks = np.atleast_2d(marks)
        hit = np.zeros(marks.shape[0], dtype=bool)
        for z in self.points[self.weights > 0]:
            hit |= np.all(np.isclose(marks, z, rtol=0, atol=1e-12), axis=1)
        return hit

    def radial_moment(self, p, lo=0.0, hi=math.inf):
        r = np.linalg.norm(self.points, axis=1)
        sel = (r >= lo) & (r < hi)
        return float(np.sum(self.weights[sel] * r[sel] ** p))

    def mean(self):
        return self.weights @ self.points

    def second(self):
        return (self.points * self.weights[:, None]).T @ self.points

    def char_exponent(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dots = self.points @ x
        small = np.linalg.norm(self.points, axis=1) < 1.0
        vals = 1.0 - np.exp(1j * dots) + np.where(small, 1j * dots, 0.0)
        return complex(np.sum(self.weights * vals))


@dataclass(frozen=True, eq=False)
class GammaShellLayer(_Layer):
    """Symmetric 1-d density ``|z|^-alpha e^-|z|`` restricted to ``lo <= |z| < hi``."""

    index: int
    alpha: float
    lo: float
    hi: float = math.inf

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not (0 < self.lo < self.hi):
            raise ValueError("need 0 < lo < hi")

    dimension = 1
    symmetric = True

    @property
    def mass(self) -> float:
        return 2.0 * _gamma_segment(1.0 - self.alpha, self.lo, self.hi)

    @property
    def sampler_id(self) -> str:
        return f"gamma_shell(alpha={self.alpha:g},lo={self.lo:.17g},hi={self.hi:.17g})"

    def sample(self, rng, n):
        out = np.empty(n)
        filled = 0
        a, b, alpha = self.lo, self.hi, self.alpha
        while filled < n:
            m = max(64, 2 * (n - filled))
            if math.isinf(b):
                r = a + rng.exponential(size=m)
                acc = rng.random(m) < (r / a) ** (-alpha)
            else:
                r = a + (b - a) * rng.random(m)
                acc = rng.random(m) < (r / a) ** (-alpha) * np.exp(-(r - a))
            r = r[acc][: n - filled]
            out[filled : filled + r.size] = r
            filled += r.size
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return (sign * out)[:, None]

    def contains(self, marks):
        r = np.abs(np.atleast_2d(marks)[:, 0])
        return (r >= self.lo) & (r < self.hi)

    def radial_moment(self, p, lo=0.0, hi=math.inf):
        a, b = max(lo, self.lo), min(hi, self.hi)
        return 2.0 * _gamma_segment(p + 1.0 - self.alpha, a, b)

    def mean(self):
        return np.zeros(1)

    def second(self):
        return np.array([[self.radial_moment(2.0)]])

    def char_exponent(self, x):
        u = float(np.atleast_1d(x)[0])
        # odd parts cancel by symmetry
        f = lambda r: (1.0 - math.cos(u * r)) * r ** (-self.alpha) * math.exp(-r)
        val, _ = integrate.quad(f, self.lo, self.hi, limit=200)
        return complex(2.0 * val)


@dataclass(frozen=True, eq=False)
class SampledLayer(_Layer):
    """A layer known only through its mass and (optionally) a mark sampler.

    Moments are estimated by Monte Carlo with ``MC_SAMPLES`` draws from a
    fixed substream.
    """

    index: int
    layer_mass: float
    dimension: int = 1
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    membership: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "sampled"
    symmetric: bool = False

    @property
    def mass(self) -> float:
        return float(self.layer_mass)

    @property
    def sampler_id(self) -> str:
        return self.name

    def has_sampler(self) -> bool:
        return self.sampler is not None

    def has_moments(self) -> bool:
        return False

    def sample(self, rng, n):
        if self.sampler is None:
            raise ConfigurationError(f"layer {self.index} has no sampler")
        return np.asarray(self.sampler(rng, n), dtype=float).reshape(n, self.dimension)

    def contains(self, marks):
        if self.membership is None:
            return np.ones(np.atleast_2d(marks).shape[0], dtype=bool)
        return self.membership(marks)

    def _draws(self) -> np.ndarray:
        from .rng import generator

        return self.sample(generator(0, "layer-moments", self.index), MC_SAMPLES)

    def radial_moment(self, p, lo=0.0, hi=math.inf):
        r = np.linalg.norm(self._draws(), axis=1)
        sel = (r >= lo) & (r < hi)
        return self.mass * float(np.mean(np.where(sel, r**p, 0.0)))

    def mean(self):
        return self.mass * self._draws().mean(axis=0)

    def second(self):
        z = self._draws()
        return self.mass * (z.T @ z) / z.shape[0]

    def char_exponent(self, x):
        z = self._draws()
        dots = z @ np.atleast_1d(x)
        small = np.linalg.norm(z, axis=1) < 1.0
        return complex(self.mass * np.mean(1.0 - np.exp(1j * dots) + np.where(small, 1j * dots, 0.0)))


@dataclass(frozen=True, eq=False)
class IntensityMeasure:
    """A jump intensity presented as an ordered ladder of disjoint layers."""

    layers: tuple
    dimension: int = 1
    symmetric: bool = False
    name: str = "nu"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, layer in enumerate(self.layers, start=1):
            if layer.index != i:
                raise ValueError(f"layer at position {i} has index {layer.index}")
            if layer.dimension != self.dimension:
                raise ValueError("layer dimension differs from measure dimension")
            if not (math.isfinite(layer.mass) and layer.mass >= 0):
                raise ValueError(f"layer {i} mass must be finite and nonnegative")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def masses(self) -> np.ndarray:
        return np.array([layer.mass for layer in self.layers])

    def instantiated(self, n_max: int | None = None) -> tuple:
        n = self.n_layers if n_max is None else n_max
        return self.layers[:n]

    def layer_of(self, marks: np.ndarray) -> np.ndarray:
        """Index of the layer each mark belongs to (0 if none)."""
        marks = np.atleast_2d(marks)
        out = np.zeros(marks.shape[0], dtype=int)
        for layer in reversed(self.layers):
            out[layer.contains(marks)] = layer.index
        return out

    def mean(self, n_max: int | None = None) -> np.ndarray:
        """Integral of z over the instantiated layers."""
        acc = np.zeros(self.dimension)
        for layer in self.instantiated(n_max):
            if not (self.symmetric and layer.symmetric):
                acc = acc + layer.mean()
        return acc

    def second(self, n_max: int | None = None) -> np.ndarray:
        acc = np.zeros((self.dimension, self.dimension))
        for layer in self.instantiated(n_max):
            acc = acc + layer.second()
        return acc

    def char_exponent(self, x, n_max: int | None = None) -> complex:
        return sum((layer.char_exponent(x) for layer in self.instantiated(n_max)), 0j)


def cumulative_mass(nu: IntensityMeasure, n: int) -> float:
    """nu(S_n): the summed mass of layers 1..n."""
    if not 1 <= n <= nu.n_layers:
        raise IndexError(f"layer index {n} outside 1..{nu.n_layers}")
    return float(math.fsum(layer.mass for layer in nu.layers[:n]))


@dataclass(frozen=True)
class IntegrabilityReport:
    value: float
    terms: tuple
    cauchy_tail: bool

    def __float__(self) -> float:
        return self.value


def levy_integrability(
    nu: IntensityMeasure, p: float = 2.0, tail_tol: float = 0.25, n_from: int = 1
) -> IntegrabilityReport:
    """Estimate the integral of ``min(1, |z|^p)`` against ``nu``.

    The sum runs over layers ``n_from..n_layers``.  ``cauchy_tail`` is False
    when the last layer still contributes more than ``tail_tol`` times the
    running total, i.e. the ladder gives no evidence the series converges.
    """
    if not 1.0 <= p <= 2.0:
        raise ValueError("p must lie in [1, 2]")
    terms = []
    for layer in nu.layers[n_from - 1 :]:
        if layer.has_moments():
            terms.append(layer.truncated_moment(p))
        elif layer.has_sampler():
            terms.append(layer.truncated_moment(p))
        else:
            raise ConfigurationError(f"layer {layer.index} has neither moments nor a sampler")
    total = math.fsum(terms)
    cauchy = len(terms) < 2 or terms[-1] <= tail_tol * max(total, 1e-300)
    return IntegrabilityReport(total, tuple(terms), bool(cauchy and math.isfinite(total)))


def check_symmetry(nu: IntensityMeasure, rng: np.random.Generator, n_draws: int = 10_000) -> bool:
    """Statistical symmetry check: per-layer mark means within 4 std/sqrt(N) of 0."""
    for layer in nu.layers:
        if layer.mass == 0:
            continue
        z = layer.sample(rng, n_draws)
        sd = z.std(axis=0)
        if np.any(np.abs(z.mean(axis=0)) > 4 * sd / math.sqrt(n_draws) + 1e-15):
            return False
    return True


@dataclass(frozen=True, eq=False)
class CountingMeasure:
    """A finite sum of Dirac masses, each tagged with its ladder layer."""

    marks: np.ndarray
    layers: np.ndarray
    n_layers: int

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float)
        if marks.ndim == 1:
            marks = marks[:, None] if marks.size else marks.reshape(0, 1)
        layers = np.asarray(self.layers, dtype=int).reshape(-1)
        if marks.shape[0] != layers.shape[0]:
            raise ValueError("marks and layers differ in length")
        if layers.size and (layers.min() < 1 or layers.max() > self.n_layers):
            raise ValueError("atom layer outside the ladder")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "layers", layers)

    def __len__(self) -> int:
        return self.layers.shape[0]

    def same_atoms(self, other: "CountingMeasure") -> bool:
        return (
            self.n_layers == other.n_layers
            and np.array_equal(self.marks, other.marks)
            and np.array_equal(self.layers, other.layers)
        )

    def check_membership(self, nu: IntensityMeasure) -> bool:
        return all(
            bool(nu.layers[l - 1].contains(z[None, :])[0]) for z, l in zip(self.marks, self.layers)
        )


def restrict(mu: CountingMeasure, n: int) -> CountingMeasure:
    """mu restricted to S_n (atoms of layers 1..n)."""
    if not 1 <= n <= mu.n_layers:
        raise IndexError(f"layer index {n} outside 1..{mu.n_layers}")
    keep = mu.layers <= n
    return CountingMeasure(mu.marks[keep], mu.layers[keep], mu.n_layers)


@dataclass(frozen=True, eq=False)
class SeparatingFamily:
    """Bounded test functions ``f_k`` with summable weights ``lambda_k``."""

    functions: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if len(self.functions) != w.size:
            raise ValueError("need one weight per function")
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.functions)

    def evaluate(self, marks: np.ndarray) -> np.ndarray:
        """Matrix F[i, k] = f_k(mark_i)."""
        marks = np.atleast_2d(marks)
        if marks.shape[0] == 0:
            return np.zeros((0, len(self)))
        return np.column_stack([f(marks) for f in self.functions])

    def partial_sums_cauchy(self, tol: float = 1e-6) -> bool:
        tail = self.weights[len(self.weights) // 2 :].sum()
        return bool(np.isfinite(self.weights.sum()) and tail < max(tol, 2.0 ** -(len(self.weights) // 2 - 1)))

    def bounded_on(self, marks: np.ndarray) -> bool:
        return bool(np.all(np.abs(self.evaluate(marks)) <= 1.0))


def _ridge(direction: np.ndarray, offset: float):
    def f(x):
        return np.tanh(x @ direction + offset)

    return f


def default_family(dimension: int, K: int = 32) -> SeparatingFamily:
    """``x -> tanh(<x, e_k> + b_k)`` on a fixed direction set, weights ``2^-k``."""
    from .rng import generator

    rng = generator(0, "separating-family", dimension)
    fns = []
    for k in range(1, K + 1):
        e = rng.standard_normal(dimension)
        e *= (0.25 + 2.0 * (k % 8) / 8.0) / np.linalg.norm(e)
        fns.append(_ridge(e, float(rng.uniform(-1.0, 1.0))))
    return SeparatingFamily(tuple(fns), 2.0 ** -np.arange(1, K + 1))


def _g(x):
    return x / (1.0 + x)


def d_S(
    mu1: CountingMeasure, mu2: CountingMeasure, fam: SeparatingFamily, K: int | None = None
) -> float:
    """Two-level bounded metric between counting measures on one ladder.

    ``d_{S_n}`` sums ``lambda_k g(|<mu1|S_n, f_k> - <mu2|S_n, f_k>|)`` over the
    test functions; the outer sum weights ``g(d_{S_n})`` by ``lambda_n``.  Both
    sums stop after ``K`` terms (all of ``fam`` by default).
    """
    if mu1.n_layers != mu2.n_layers:
        raise IncompatibleLadderError(f"ladders of {mu1.n_layers} and {mu2.n_layers} layers")
    K = len(fam) if K is None else min(K, len(fam))
    lam = fam.weights[:K]
    f1 = fam.evaluate(mu1.marks)[:, :K] if len(mu1) else np.zeros((0, K))
    f2 = fam.evaluate(mu2.marks)[:, :K] if len(mu2) else np.zeros((0, K))
    total = 0.0
    for n in range(1, min(mu1.n_layers, K) + 1):
        s1 = f1[mu1.layers <= n].sum(axis=0)
        s2 = f2[mu2.layers <= n].sum(axis=0)
        inner = float(np.sum(lam * _g(np.abs(s1 - s2))))
        total += lam[n - 1] * _g(inner)
    return total


# ----------------------------------------------------------------------
# registry


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.replace(",", " ").split()]


def _vectors(text: str) -> np.ndarray:
    return np.array([_floats(chunk) for chunk in text.split(";") if chunk.strip()])


def measure_from_section(name: str, sec: configparser.SectionProxy) -> IntensityMeasure:
    kind = sec.get("kind", "").strip()
    if kind == "point_masses":
        pts = _vectors(sec["points"])
        w = np.array(_floats(sec["weights"]))
        lay = np.array([int(x) for x in _floats(sec["layer"])]) if "layer" in sec else np.ones(len(w), int)
        if len(lay) != len(w) or len(pts) != len(w):
            raise ConfigurationError(f"[{name}] points, weights and layer lengths differ")
        layers = tuple(
            PointMassLayer(n, pts[lay == n], w[lay == n]) for n in range(1, int(lay.max(initial=0)) + 1)
        )
        dim = pts.shape[1]
    elif kind == "gamma_ladder":
        alpha = sec.getfloat("alpha")
        radii = _floats(sec["radii"])
        edges = [math.inf] + radii
        layers = tuple(
            GammaShellLayer(n, alpha, edges[n], edges[n - 1]) for n in range(1, len(radii) + 1)
        )
        dim = 1
    elif kind == "empty":
        layers, dim = (), sec.getint("dimension", 1)
    else:
        raise ConfigurationError(f"[{name}] unknown kind {kind!r}")
    sym = sec.getboolean("symmetric", fallback=None)
    if sym is None:
        sym = all(layer.symmetric for layer in layers)
    return IntensityMeasure(layers, dim, sym, name)


def load_registry(text: str) -> dict[str, IntensityMeasure]:
    """Parse ``[intensity NAME]`` sections of an INI document.

    See the README for the grammar.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(text)
    out = {}
    for section in cp.sections():
        head, _, name = section.partition(" ")
        if head != "intensity":
            continue
        out[name.strip()] = measure_from_section(name.strip(), cp[section])
    return out


BUILTIN_REGISTRY = """
[intensity empty]
kind = empty

[intensity finite3]
kind = point_masses
points = -1; 1
weights = 1.5, 1.5

[intensity two_layer]
kind = point_masses
points = -1; 1; -0.5; 0.5
weights = 1, 1, 2, 2
layer = 1, 1, 2, 2

[intensity alpha_half]
kind = gamma_ladder
alpha = 0.5
radii = 1, 0.5, 0.3333333333333333
"""


def builtin_registry() -> dict[str, IntensityMeasure]:
    return load_registry(BUILTIN_REGISTRY)
