import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from spinlab.parisi import (COARSE, FINE, DiscreteMeasure, correction_integral, optimize_parisi,
                            parisi_functional, solve_parisi_pde)


def gh_log_cosh(scale, n=320):
    """E log cosh(scale Z) by probabilists' Gauss-Hermite, independent of the package rules."""
    z, w = hermegauss(n)
    w = w / w.sum()
    x = scale * z
    return float(w @ (np.abs(x) + np.log1p(np.exp(-2 * np.abs(x))) - math.log(2)))


def random_measure(rng, K=None):
    K = K or int(rng.integers(1, 5))
    return DiscreteMeasure.build(np.sort(rng.uniform(0, 1, K)), rng.dirichlet(np.ones(K)))


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure((0.5, 0.2), (0.5, 0.5))
    with pytest.raises(ValueError):
        DiscreteMeasure((0.2,), (0.9,))
    mu = DiscreteMeasure.build([0.3, 0.3 + 1e-12, 0.7], [0.2, 0.3, 0.5])
    assert mu.atoms == (0.3, 0.7) and mu.weights[0] == pytest.approx(0.5)
    assert mu.cdf(0.5) == pytest.approx(0.5) and mu.cdf(1.0) == pytest.approx(1.0)


def test_dirac_zero_closed_form():
    beta = 0.8
    sol = solve_parisi_pde(DiscreteMeasure.dirac(0.0), beta)
    # breakpoints are {0, 1}; Phi(t, 0) = beta^2 (1 - t)
    assert sol.value_at_origin == pytest.approx(beta**2, abs=1e-10)
    assert np.allclose(sol.phi[-1], np.log(np.cosh(sol.x)), atol=1e-12)


@pytest.mark.parametrize("beta", [0.3, 0.7, 1.5])
def test_functional_dirac_zero(beta):
    assert parisi_functional(DiscreteMeasure.dirac(0.0), beta) == pytest.approx(beta**2 / 2, abs=1e-8)


@pytest.mark.parametrize("beta", [0.3, 1.0, 2.0])
def test_functional_dirac_one(beta):
    assert correction_integral(DiscreteMeasure.dirac(1.0)) == 0.0
    val = parisi_functional(DiscreteMeasure.dirac(1.0), beta)
    assert val == pytest.approx(gh_log_cosh(math.sqrt(2) * beta), abs=1e-8)


def test_beta_zero():
    mu = DiscreteMeasure((0.2, 0.8), (0.5, 0.5))
    assert parisi_functional(mu, 0.0) == 0.0
    assert optimize_parisi(0.0, 3).value == 0.0


def test_lipschitz_and_evenness():
    rng = np.random.default_rng(0)
    for _ in range(5):
        sol = solve_parisi_pde(random_measure(rng), rng.uniform(0.2, 2.0))
        for k in range(len(sol.phi)):
            assert np.max(np.abs(sol.dphi[k])) <= 1 + 1e-8
            full = sol.full_phi(k)
            assert np.allclose(full, full[::-1])


def test_monotone_coupling():
    rng = np.random.default_rng(1)
    for _ in range(10):
        lo = random_measure(rng)
        hi = DiscreteMeasure.build(np.array(lo.atoms) * rng.uniform(0, 1), lo.weights)  # stochastically smaller atoms
        beta = rng.uniform(0.3, 1.5)
        # smaller atoms mean a pointwise larger cdf zeta
        assert solve_parisi_pde(hi, beta).value_at_origin >= solve_parisi_pde(lo, beta).value_at_origin - 1e-10


def test_functional_convexity():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b = random_measure(rng), random_measure(rng)
        beta = rng.uniform(0.3, 2.0)
        mid = parisi_functional(a.mix(b), beta)
        assert mid <= (parisi_functional(a, beta) + parisi_functional(b, beta)) / 2 + 1e-6


def test_self_convergence():
    mu = DiscreteMeasure((0.1, 0.5, 0.85), (0.3, 0.3, 0.4))
    for beta in (0.5, 1.0, 2.0):
        base = parisi_functional(mu, beta)
        assert abs(parisi_functional(mu, beta, FINE.halved(beta**2)) - base) < 1e-8
        assert abs(parisi_functional(mu, beta, FINE.doubled_nodes()) - base) < 1e-8


def test_coarse_grid_close_to_fine():
    mu = DiscreteMeasure((0.2, 0.6), (0.5, 0.5))
    assert abs(parisi_functional(mu, 1.0, COARSE) - parisi_functional(mu, 1.0)) < 1e-6


def test_optimize_high_temperature():
    fit = optimize_parisi(0.3, 2, restarts=2)
    assert fit.value == pytest.approx(0.045, abs=1e-4)
    assert fit.measure.atoms[0] < 1e-3


def test_optimize_nesting():
    fit = optimize_parisi(1.2, 2, restarts=2)
    k1 = dict(fit.levels)[1]
    assert fit.value <= k1 + 1e-8
    vals = [v for _, v in fit.levels]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert fit.value < 1.2**2 / 2  # RSB beats replica symmetry below the AT line


def test_optimize_deterministic():
    a = optimize_parisi(1.0, 2, restarts=2, seed=3)
    b = optimize_parisi(1.0, 2, restarts=2, seed=3, threads=2)
    assert a.value == b.value and a.measure.atoms == b.measure.atoms
