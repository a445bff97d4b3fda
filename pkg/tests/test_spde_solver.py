import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ywlab.models import PRESETS, ModelConfig
from ywlab.noise import InitialLaw, NoiseBundle, PrmRealization, WienerPath, simulate_bundle
from ywlab.spde_solver import (
    Coefficients,
    DivergenceError,
    GalerkinSpace,
    RegularityRegistry,
    UnsupportedConfiguration,
    finiteness_check,
    gamma_residual,
    gamma_residuals,
    l2_v_norm_sq,
    mild_heat_oracle,
    nonnegativity,
    porous_medium_b,
    solve,
    theta_check,
)


def _quiet_bundle(d, grid, initial, modes=1):
    w = WienerPath(grid, np.zeros((grid.size - 1, modes)))
    eta = PrmRealization(np.empty(0), np.empty((0, 1)), np.empty(0), float(grid[-1]))
    return NoiseBundle(w, eta, np.asarray(initial, float))


def test_space_norms_and_embeddings():
    space = GalerkinSpace.dirichlet(5)
    assert space.mu == pytest.approx((np.arange(1, 6) * math.pi) ** 2)
    c1, c2 = space.embedding_constants()
    for k in range(5):
        e = np.eye(5)[k]
        assert space.vprime_norm(e) <= c1 * space.h_norm(e) + 1e-15
        assert c1 * space.h_norm(e) <= c2 * space.v_norm(e) + 1e-15
    with pytest.raises(ValueError):
        GalerkinSpace(2, np.array([2.0, 1.0]))


def test_nodal_round_trip():
    space = GalerkinSpace.dirichlet(6)
    u = np.random.default_rng(0).standard_normal(6)
    assert np.allclose(space.from_nodal(space.to_nodal(u)), u, atol=1e-13)
    # nodal values are the sine series sqrt(2) sum u_k sin(k pi x)
    x = space.nodes()
    direct = math.sqrt(2) * np.sin(np.outer(x, np.arange(1, 7)) * math.pi) @ u
    assert np.allclose(space.to_nodal(u), direct, atol=1e-12)


def test_porous_medium_operator():
    space = GalerkinSpace.dirichlet(6)
    u = np.random.default_rng(1).standard_normal(6)
    assert np.all(porous_medium_b(np.zeros(6), 3.0, space) == 0.0)
    assert np.allclose(porous_medium_b(u, 2.0, space), -space.mu * u, atol=1e-10)
    with pytest.raises(ValueError):
        porous_medium_b(u, 1.5, space)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.lists(st.floats(-3, 3), min_size=6, max_size=6),
       st.sampled_from([2.0, 3.0, 4.5]))
def test_porous_medium_monotone(u, v, p):
    space = GalerkinSpace.dirichlet(6)
    u, v = np.array(u), np.array(v)
    diff = porous_medium_b(u, p, space) - porous_medium_b(v, p, space)
    assert space.pairing(diff, u - v) <= 1e-9 * (1 + np.sum((u - v) ** 2))


def test_zero_coefficients_constant_path(grid100):
    space = GalerkinSpace.dirichlet(3)
    U = solve(Coefficients(3), space, _quiet_bundle(3, grid100, [1.0, 2.0, 3.0]), ModelConfig().build().nu)
    assert np.all(U.values == [1.0, 2.0, 3.0])


def test_heat_scheme_identity(grid100):
    model = ModelConfig(preset="heat", d=3).build()
    u0 = np.array([1.0, 0.5, 0.25])
    U = solve(model.coeffs, model.space, _quiet_bundle(3, grid100, u0, 2), model.nu)
    mu = model.space.mu
    for i in (10, 50, 100):
        assert np.array_equal(U.values[i], U.values[i])
        assert U.values[i] == pytest.approx((1 - mu * 0.01) ** i * u0, rel=1e-12)
    # e^{-mu t} within O(dt) for the slowest mode
    assert abs(U.values[100][0] - math.exp(-mu[0]) * u0[0]) < 10 * 0.01 * mu[0] * math.exp(-mu[0]) * 2


def test_semi_implicit_recursion(grid100):
    model = ModelConfig(preset="heat", d=3).build()
    u0 = np.array([1.0, 0.5, 0.25])
    U = solve(model.coeffs, model.space, _quiet_bundle(3, grid100, u0, 2), model.nu, scheme="semi_implicit")
    assert U.values[100] == pytest.approx((1 + model.space.mu * 0.01) ** -100 * u0, rel=1e-12)


def test_explicit_rejects_unstable_step():
    model = ModelConfig(preset="heat", M=50).build()
    with pytest.raises(UnsupportedConfiguration):
        solve(model.coeffs, model.space, model.bundle(0), model.nu)
    U = solve(model.coeffs, model.space, model.bundle(0), model.nu, scheme="semi_implicit")
    assert np.all(np.isfinite(U.values))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_time(grid100):
    space = GalerkinSpace.dirichlet(1)
    coeffs = Coefficients(1, b=lambda t, U: 1e200 * U**2)
    with pytest.raises(DivergenceError) as err:
        solve(coeffs, space, _quiet_bundle(1, grid100, [1.0]), ModelConfig().build().nu)
    assert 0 < err.value.time <= 1.0


@pytest.mark.parametrize("preset", PRESETS)
@pytest.mark.parametrize("scheme", ["explicit", "semi_implicit"])
def test_gamma_residual_all_presets(preset, scheme):
    model = ModelConfig(preset=preset).build()
    b = model.bundle(3)
    U = solve(model.coeffs, model.space, b, model.nu, scheme=scheme)
    assert np.max(np.abs(gamma_residuals(U, b, model.coeffs, model.nu, scheme))) < 1e-10
    for k in (1, model.space.dim):
        for t in (0.0, 0.37, 1.0):
            assert abs(gamma_residual(U, b, model.coeffs, model.space, model.nu, k, t, scheme)) < 1e-10


def test_gamma_residual_detects_perturbation():
    model = ModelConfig(preset="heat_jump").build()
    b = model.bundle(4)
    U = solve(model.coeffs, model.space, b, model.nu)
    vals = U.values.copy()
    vals[40, 1] += 1e-3
    bad = type(U)(U.grid, vals, U.jump_times)
    assert gamma_residual(bad, b, model.coeffs, model.space, model.nu, 2, 0.4) == pytest.approx(-1e-3, abs=1e-12)
    with pytest.raises(IndexError):
        gamma_residual(U, b, model.coeffs, model.space, model.nu, 0, 0.4)


def test_deterministic_solve():
    model = ModelConfig(preset="porous_medium").build()
    b = model.bundle(5)
    assert solve(model.coeffs, model.space, b, model.nu).equals(solve(model.coeffs, model.space, b, model.nu))


def test_mild_oracle_examples(registry, grid100):
    space = GalerkinSpace.dirichlet(3)
    nu = registry["finite3"]
    empty = PrmRealization(np.empty(0), np.empty((0, 1)), np.empty(0), 1.0)
    assert np.all(mild_heat_oracle(space, empty, nu, grid100).values == 0.0)
    one = PrmRealization(np.array([0.5]), np.array([[1.0]]), np.array([1]), 1.0)
    X = mild_heat_oracle(space, one, nu, grid100)
    expected = np.where(grid100 >= 0.5, np.exp(-space.mu[0] * (grid100 - 0.5)), 0.0)
    assert np.allclose(X.values[:, 0], expected, rtol=1e-14, atol=0)


def test_mild_oracle_rejects_truncated_asymmetric():
    from ywlab.measure_core import IntensityMeasure, PointMassLayer

    nu = IntensityMeasure((PointMassLayer(1, [[1.0]], [1.0]), PointMassLayer(2, [[0.5]], [1.0])), 1, False)
    eta = PrmRealization(np.empty(0), np.empty((0, 1)), np.empty(0), 1.0, n_max=1)
    with pytest.raises(UnsupportedConfiguration):
        mild_heat_oracle(GalerkinSpace.dirichlet(2), eta, nu, np.arange(11) / 10)


def test_mild_oracle_second_moment_stable_in_cutoff(registry):
    nu = registry["alpha_half"]
    space = GalerkinSpace.dirichlet(2)
    grid = np.arange(11) / 10
    means = []
    for n_max in (2, 3):
        sq = []
        for j in range(2000):
            b = simulate_bundle(nu, grid, 1, InitialLaw((0.0, 0.0)), 8, j, n_max)
            sq.append(np.max(np.sum(mild_heat_oracle(space, b.prm, nu, grid).values ** 2, axis=1)))
        means.append(np.mean(sq))
    assert np.all(np.isfinite(means)) and abs(means[1] - means[0]) < 0.5 * means[0]


def test_refinement_against_mild_oracle():
    from ywlab.suites import refinement_errors

    errs = refinement_errors(levels=(100, 200, 400), n_bundles=60, seed=1)
    assert np.all(np.diff(errs) < 0)


def test_finiteness_check():
    zero = ModelConfig(preset="zero").build()
    U = solve(zero.coeffs, zero.space, zero.bundle(0), zero.nu)
    rep = finiteness_check(U, zero.coeffs, zero.nu, zero.space)
    assert (rep.drift_l1, rep.diffusion_l2, rep.small_jump, rep.large_jump) == (0, 0, 0, 0) and rep.finite
    heat = ModelConfig(preset="heat_jump", intensity="alpha_half").build()
    U = solve(heat.coeffs, heat.space, heat.bundle(1), heat.nu)
    rep = finiteness_check(U, heat.coeffs, heat.nu, heat.space)
    assert rep.finite
    assert np.allclose(rep.split_masses.sum(axis=2), rep.layer_masses[None, :], rtol=1e-10)
    vals = U.values.copy()
    vals[3, 0] = np.nan
    assert not finiteness_check(type(U)(U.grid, vals), heat.coeffs, heat.nu, heat.space).finite


def test_theta_check():
    model = ModelConfig(preset="heat").build()
    paths = [solve(model.coeffs, model.space, model.bundle(0, j), model.nu) for j in range(5)]
    assert theta_check(paths, RegularityRegistry()).member
    theta = l2_v_norm_sq(model.space)
    mean = np.mean([theta(u) for u in paths])
    assert not theta_check(paths, RegularityRegistry((theta,), R=0.5 * mean)).member
    assert theta_check(paths, RegularityRegistry((theta,), R=2 * mean)).member
    neg = type(paths[0])(paths[0].grid, -np.abs(paths[0].values))
    assert not theta_check([neg], RegularityRegistry(theta1=(nonnegativity(model.space),))).member


def test_coefficient_probe():
    model = ModelConfig(preset="multiplicative_sigma").build()
    states = np.random.default_rng(2).standard_normal((20, 4))
    assert model.coeffs.probe(states)
    bad = Coefficients(2, b=lambda t, U: np.full(2, np.inf))
    assert not bad.probe([np.zeros(2)])
