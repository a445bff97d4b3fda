import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ywlab.measure_core import (
    ConfigurationError,
    CountingMeasure,
    GammaShellLayer,
    IncompatibleLadderError,
    IntensityMeasure,
    PointMassLayer,
    SampledLayer,
    SeparatingFamily,
    check_symmetry,
    cumulative_mass,
    d_S,
    default_family,
    levy_integrability,
    load_registry,
    restrict,
    upper_gamma,
)
from ywlab.rng import generator

# scipy.integrate.quad of |z|^-1/2 e^-|z| over both signs, frozen before the build
ORACLE_LAYER1 = 0.5576111705613239
ORACLE_LAYER2 = 0.5672252926274902
ORACLE_LAYER3 = 0.3435216572778444
ORACLE_LEVY_P2 = 0.9181358422892127
ORACLE_LEVY_P15 = 0.9968435674056594
ORACLE_SECOND = 2.618130255506093


def _ladder(masses):
    layers = tuple(PointMassLayer(n, [[-1.0], [1.0]], [m / 2, m / 2]) for n, m in enumerate(masses, 1))
    return IntensityMeasure(layers, 1, True)


def test_cumulative_mass_examples():
    assert cumulative_mass(_ladder([3.0]), 1) == 3.0
    assert cumulative_mass(_ladder([1.0, 2.0, 4.0]), 3) == 7.0
    with pytest.raises(IndexError):
        cumulative_mass(_ladder([1.0]), 2)


def test_gamma_ladder_masses_match_quadrature(registry):
    nu = registry["alpha_half"]
    assert nu.masses == pytest.approx([ORACLE_LAYER1, ORACLE_LAYER2, ORACLE_LAYER3], rel=1e-10)
    assert cumulative_mass(nu, 1) == pytest.approx(ORACLE_LAYER1, rel=1e-10)


def test_levy_integrability_oracles(registry):
    nu = registry["alpha_half"]
    assert float(levy_integrability(nu, 2.0)) == pytest.approx(ORACLE_LEVY_P2, rel=1e-9)
    assert float(levy_integrability(nu, 1.5)) == pytest.approx(ORACLE_LEVY_P15, rel=1e-9)
    assert float(nu.second()[0, 0]) == pytest.approx(ORACLE_SECOND, rel=1e-9)


def test_levy_integrability_trivial_cases(registry):
    assert float(levy_integrability(registry["empty"])) == 0.0
    # finite mass on |z| >= 1: the truncation min(1, |z|^p) is the indicator
    for p in (1.0, 1.5, 2.0):
        assert float(levy_integrability(registry["finite3"], p)) == pytest.approx(3.0, abs=1e-9)


def test_levy_integrability_needs_data():
    bare = SampledLayer(1, 1.0, 1, None, None, "bare", True)
    with pytest.raises(ConfigurationError):
        levy_integrability(IntensityMeasure((bare,), 1, True))


def test_levy_integrability_flags_nonconvergent_tail():
    # layer contributions that grow give no Cauchy evidence
    nu = IntensityMeasure(tuple(PointMassLayer(n, [[2.0]], [float(n)]) for n in (1, 2, 3)), 1, False)
    assert not levy_integrability(nu).cauchy_tail


def test_upper_gamma_negative_order():
    from scipy.integrate import quad

    for s in (-0.5, 0.5, 1.5):
        ref = quad(lambda r: r ** (s - 1) * math.exp(-r), 0.7, math.inf)[0]
        assert upper_gamma(s, 0.7) == pytest.approx(ref, rel=1e-10)


def test_gamma_shell_sampler_stays_in_shell():
    layer = GammaShellLayer(2, 0.5, 0.5, 1.0)
    z = layer.sample(generator(1, "test"), 5000)
    assert np.all((np.abs(z) >= 0.5) & (np.abs(z) < 1.0))
    assert np.all(layer.contains(z))


def test_symmetry_check(registry):
    assert check_symmetry(registry["alpha_half"], generator(0, "sym"))
    lopsided = IntensityMeasure((PointMassLayer(1, [[1.0], [2.0]], [1.0, 1.0]),), 1, False)
    assert not check_symmetry(lopsided, generator(0, "sym"))


def test_cumulative_mass_nondecreasing(registry):
    for nu in registry.values():
        masses = [cumulative_mass(nu, n) for n in range(1, nu.n_layers + 1)]
        assert all(a <= b for a, b in zip(masses, masses[1:]))


def test_registry_grammar():
    reg = load_registry(
        """
        [intensity custom]
        kind = point_masses
        points = 1 0; -1 0; 0 2
        weights = 0.5, 0.5, 1
        layer = 1, 1, 2
        """.replace("        ", "")
    )
    nu = reg["custom"]
    assert nu.dimension == 2 and nu.n_layers == 2
    assert list(nu.masses) == [1.0, 1.0]
    assert not nu.symmetric
    with pytest.raises(ConfigurationError):
        load_registry("[intensity x]\nkind = nonsense\n")


def test_restrict_examples():
    mu = CountingMeasure([[0.1], [0.2], [0.3]], [1, 2, 3], 3)
    assert restrict(mu, 3).same_atoms(mu)
    r = restrict(mu, 2)
    assert list(r.layers) == [1, 2]
    assert restrict(r, 2).same_atoms(r)
    with pytest.raises(IndexError):
        restrict(mu, 4)


g = lambda x: x / (1 + x)  # noqa: E731


def test_d_S_two_dirac_hand_value():
    a, b, lam = 0.3, -0.7, 0.5
    fam = SeparatingFamily((lambda m: np.tanh(m[:, 0]),), np.array([lam]))
    hand = lam * g(lam * g(abs(math.tanh(a) - math.tanh(b))))
    got = d_S(CountingMeasure([[a]], [1], 1), CountingMeasure([[b]], [1], 1), fam)
    assert abs(got - hand) <= 1e-12


def test_d_S_multiplicity_and_ladder_mismatch():
    fam = default_family(1)
    one = CountingMeasure([[0.4]], [1], 2)
    two = CountingMeasure([[0.4], [0.4]], [1, 1], 2)
    assert d_S(one, one, fam) == 0.0
    assert d_S(one, two, fam) > 0.0
    with pytest.raises(IncompatibleLadderError):
        d_S(one, CountingMeasure([[0.4]], [1], 3), fam)


def test_default_family_bounded_and_summable():
    fam = default_family(2)
    assert fam.bounded_on(generator(0, "pts").normal(scale=5, size=(200, 2)))
    assert fam.partial_sums_cauchy()


atoms = st.lists(st.tuples(st.sampled_from([-1.0, -0.5, 0.25, 1.0, 2.0]), st.integers(1, 3)), max_size=5)


def _measure(spec):
    return CountingMeasure(np.array([[z] for z, _ in spec]).reshape(-1, 1), [l for _, l in spec], 3)


@given(atoms, atoms, atoms)
def test_d_S_metric_axioms(a, b, c):
    fam = default_family(1)
    x, y, z = _measure(a), _measure(b), _measure(c)
    assert d_S(x, x, fam) == 0.0
    assert d_S(x, y, fam) == d_S(y, x, fam)
    assert d_S(x, z, fam) <= d_S(x, y, fam) + d_S(y, z, fam) + 1e-12
    assert 0.0 <= d_S(x, y, fam) < 1.0


@given(atoms, st.integers(1, 3))
def test_restrict_counts_partition(spec, n):
    mu = _measure(spec)
    kept = restrict(mu, n)
    assert len(kept) + int(np.sum(mu.layers > n)) == len(mu)
    assert restrict(kept, n).same_atoms(kept)
