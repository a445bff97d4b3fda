"""Numerical laboratory for SPDEs driven by Wiener noise and Poisson random measures.

Submodules
----------
measure_core
    Layered intensity measures, counting measures and the d_S metric.
noise
    Wiener paths, Poisson random measures and the noise bundle.
stoch_integral
    Compensated jump integrals, Ito sums, Levy-Khinchine exponents.
spde_solver
    Spectral Galerkin discretization and the weak-form residual.
yw_harness
    Pathwise uniqueness, strong solution, compatibility and law checks.
skorokhod
    The Skorokhod d0 metric on piecewise-constant paths.
"""

__version__ = "0.1.0"
