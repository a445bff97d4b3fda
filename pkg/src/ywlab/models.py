"""Named model presets.

A :class:`ModelConfig` is plain data (picklable, hashable into a digest);
:meth:`ModelConfig.build` turns it into the space, coefficients, intensity
and grid used by the solver.  Worker processes rebuild models from the
config instead of receiving closures.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .measure_core import IntensityMeasure, builtin_registry, load_registry
from .noise import InitialLaw, NoiseBundle, digest, simulate_bundle
from .spde_solver import Coefficients, GalerkinSpace, porous_medium_b

__all__ = ["PRESETS", "ModelConfig", "Model", "UnknownPreset"]

PRESETS = ("zero", "heat", "heat_jump", "multiplicative_sigma", "porous_medium", "pure_jump", "identity")


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "heat_jump"
    d: int = 4
    modes: int = 2
    intensity: str = "finite3"
    n_max: int | None = None
    T: float = 1.0
    M: int = 100
    sigma_scale: float = 0.5
    jump_scale: float = 0.2
    p_exp: float = 3.0
    initial_mean: tuple = ()
    initial_scale: float = 0.0
    # extra ``[intensity NAME]`` INI sections, layered over the built-ins
    intensities: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        out["initial_mean"] = list(self.initial_mean)
        return out

    def digest(self) -> str:
        return digest(self.to_dict())

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def build(self) -> "Model":
        if self.preset not in PRESETS:
            raise UnknownPreset(self.preset)
        registry = builtin_registry()
        if self.intensities:
            registry.update(load_registry(self.intensities))
        if self.intensity not in registry:
            raise UnknownPreset(f"intensity {self.intensity!r}")
        nu = registry[self.intensity]
        space = GalerkinSpace.dirichlet(self.d)
        coeffs = _coefficients(self, space, nu)
        grid = self.T * np.arange(self.M + 1) / self.M
        grid[-1] = self.T
        mean = np.zeros(self.d)
        if self.initial_mean:
            mean[: len(self.initial_mean)] = self.initial_mean
        elif self.preset == "porous_medium":
            mean = 0.3 / np.arange(1, self.d + 1)
        elif self.preset not in ("pure_jump", "identity", "zero"):
            mean = 1.0 / np.arange(1, self.d + 1)
        law = InitialLaw(tuple(float(x) for x in mean), self.initial_scale)
        return Model(self, space, coeffs, nu, grid, law)


@dataclass(frozen=True, eq=False)
class Model:
    config: ModelConfig
    space: GalerkinSpace
    coeffs: Coefficients
    nu: IntensityMeasure
    grid: np.ndarray
    initial: InitialLaw

    def bundle(self, master_seed: int, path_index: int = 0) -> NoiseBundle:
        return simulate_bundle(
            self.nu, self.grid, max(self.config.modes, 1), self.initial, master_seed, path_index,
            self.config.n_max, self.config.digest(),
        )


def _besov_weights(space: GalerkinSpace) -> np.ndarray:
    # (I - Delta)^{-d/2 - 2} with spatial dimension 1
    return (1.0 + space.mu) ** -2.5


def _coefficients(cfg: ModelConfig, space: GalerkinSpace, nu: IntensityMeasure) -> Coefficients:
    d, K, dm = space.dim, cfg.modes, nu.dimension
    mu = space.mu
    s_modes = cfg.sigma_scale * np.ones(K) / math.sqrt(max(K, 1))
    if cfg.preset in ("zero", "identity"):
        return Coefficients(d, modes=K, mark_dim=dm)
    if cfg.preset == "heat":
        return Coefficients(d, linear=mu.copy(), modes=K, mark_dim=dm, p_growth={"b": (mu[-1], 1)})
    if cfg.preset == "heat_jump":
        G = np.zeros((d, dm))
        G[:, 0] = cfg.jump_scale * (1.0 + mu) ** -0.5 * math.sqrt(1.0 + mu[0])
        return Coefficients(d, linear=mu.copy(), jump=lambda t, U: G, modes=K, mark_dim=dm)
    if cfg.preset == "pure_jump":
        G = np.zeros((d, dm))
        G[0, 0] = 1.0
        return Coefficients(d, jump=lambda t, U: G, modes=K, mark_dim=dm)
    if cfg.preset == "multiplicative_sigma":
        return Coefficients(
            d, linear=mu.copy(), sigma=lambda t, U: np.outer(U, s_modes), modes=K, mark_dim=dm,
            p_growth={"sigma": (cfg.sigma_scale * 2, 1)},
        )
    if cfg.preset == "porous_medium":
        w = _besov_weights(space)
        p = cfg.p_exp

        def jump(t, U):
            G = np.zeros((d, dm))
            G[:, 0] = cfg.jump_scale * w * U / w[0]
            return G

        return Coefficients(
            d, b=lambda t, U: porous_medium_b(U, p, space), sigma=lambda t, U: np.outer(U, s_modes),
            jump=jump, modes=K, mark_dim=dm,
        )
    raise UnknownPreset(cfg.preset)  # pragma: no cover
