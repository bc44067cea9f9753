import json
import math
import warnings

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from spinlab.model import ModelError, bipartite_model, mixed_model, sk_model
from spinlab.parisi import DiscreteMeasure, optimize_parisi
from spinlab.uninverted import (MarkovMartingale, alg_threshold, evaluate_uninverted, martingale_from_measure,
                                optimize_uninverted, phi_star, random_martingale, tanh_family)


def test_phi_star_anchors():
    assert phi_star(0.0) == 0.0
    assert phi_star(1.0) == pytest.approx(math.log(2), abs=1e-15)
    assert phi_star(-1.0) == pytest.approx(math.log(2), abs=1e-15)
    assert phi_star(1.5) == math.inf
    lam = np.linspace(-0.99, 0.99, 41)
    # convex conjugate of log cosh: phi*(l) = l atanh(l) - log cosh(atanh(l))
    assert np.allclose(phi_star(lam), lam * np.arctanh(lam) - np.log(np.cosh(np.arctanh(lam))), atol=1e-13)


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.3])
def test_zero_martingale(beta):
    val = evaluate_uninverted(MarkovMartingale.zero(32), beta)
    assert val.linear == 0.0 and val.entropy == 0.0
    assert val.sup_time == 0.0
    assert val.total == pytest.approx(-beta**2 / 2, abs=1e-14)


def test_terminal_bound_enforced():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ModelError):
        MarkovMartingale.from_terminal(lambda x: 1.5 * np.tanh(x), t, t)
    with pytest.raises(ValueError):
        MarkovMartingale(t, t[::-1])


def test_path_monte_carlo_oracle():
    gamma, beta, M = 0.8, 0.5, 16
    t = np.linspace(0, 1, M + 1)
    val = evaluate_uninverted(MarkovMartingale.from_terminal(lambda x: np.tanh(gamma * x), t, t), beta)

    z, w = hermegauss(60)
    w = w / w.sum()
    rng = np.random.default_rng(2024)
    n_paths, chunk = 10**6, 10**5
    lin, ent, sq = [], [], []
    for _ in range(n_paths // chunk):
        B = np.concatenate([np.zeros((chunk, 1)), np.cumsum(rng.normal(0, math.sqrt(1 / M), (chunk, M)), axis=1)],
                           axis=1)
        a1 = np.tanh(gamma * B[:, -1])
        lin.append(beta * math.sqrt(2) * a1 * B[:, -1])
        ent.append(phi_star(a1))
        # m(t, x) = E tanh(gamma (x + sqrt(1 - t) Z)) by Gauss-Hermite along each path
        m = np.tanh(gamma * (B[:, :, None] + np.sqrt(1 - t)[None, :, None] * z)) @ w
        sq.append(m**2)
    lin, ent, sq = np.concatenate(lin), np.concatenate(ent), np.concatenate(sq)
    g = t - sq
    seg = np.diff(t) * (g[:, :-1] + g[:, 1:]) / 2
    tail = np.concatenate([np.cumsum(seg[:, ::-1], axis=1)[:, ::-1], np.zeros((n_paths, 1))], axis=1)
    k = int(np.argmax(tail.mean(axis=0)))
    corr = beta**2 * tail[:, k]
    total = lin - ent - corr

    def close(est, samples):
        se = samples.std(ddof=1) / math.sqrt(samples.size)
        return abs(est - samples.mean()) <= 3 * se + 1e-12

    assert close(val.linear, lin)
    assert close(val.entropy, ent)
    assert close(val.correction, corr)
    assert close(val.total, total)
    assert val.sup_time == pytest.approx(t[k])


def test_correction_vanishes_when_second_moment_is_identity():
    # a = sign-like erf; E[m(v, B_v)^2] = (2/pi) arcsin(v / (1 + s^2)) so v = sin(pi t / 2) gives s_t ~ t
    t = np.linspace(0, 1, 65)
    alpha = MarkovMartingale.from_erf([1.0], [1e-6], t, np.sin(np.pi * t / 2))
    assert np.max(np.abs(alpha.s - t)) < 1e-5
    for beta in (0.5, 2.0):
        with pytest.warns(UserWarning, match="steep"):
            val = evaluate_uninverted(alpha, beta)
        assert 0 <= val.correction < 1e-5 * beta**2
        assert val.total == pytest.approx(val.linear - val.entropy - val.correction, abs=1e-15)


def martingale_zoo():
    rng = np.random.default_rng(5)
    zoo = [tanh_family((1.2, 0.4, 0.2, 0.9, 0.3), 32), tanh_family((0.5, 0.0, 1.0, 0.0, -0.5), 32)]
    zoo += [random_martingale(rng) for _ in range(6)]
    return zoo


@pytest.mark.parametrize("alpha", martingale_zoo())
def test_consistency_and_monotone_second_moment(alpha):
    M = len(alpha.times) - 1
    for j, k in [(0, M), (1, M // 2), (M // 4, 3 * M // 4), (M // 2, M)]:
        assert alpha.consistency_error(j, k) < 1e-8
    s = alpha.s
    assert np.all(np.diff(s) >= -1e-10)
    assert s[-1] <= 1 + 1e-12
    val = evaluate_uninverted(alpha, 0.8)
    assert val.correction >= 0
    assert val.total == pytest.approx(val.linear - val.entropy - val.correction, abs=1e-15)


def test_martingale_json_round_trip():
    alpha = tanh_family((1.0, 0.3, 0.1, 0.5, 0.2), 16)
    back = MarkovMartingale.from_dict(json.loads(json.dumps(alpha.to_dict())))
    assert evaluate_uninverted(back, 0.7).total == evaluate_uninverted(alpha, 0.7).total


def test_weak_duality_small():
    rng = np.random.default_rng(17)
    for beta in (0.5, 1.0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bound = optimize_parisi(beta, 2, restarts=0).value
        for _ in range(15):
            assert evaluate_uninverted(random_martingale(rng), beta).total <= bound + 1e-3


def test_beta_zero_optimum():
    fit = optimize_uninverted(0.0)
    assert fit.value.total == 0.0
    assert np.all(fit.martingale.terminal_values() == 0)


@pytest.mark.parametrize("beta", [0.2, 0.5])
def test_high_temperature(beta):
    fit = optimize_uninverted(beta, M=32, restarts=0)
    assert abs(fit.value.total - beta**2 / 2) <= 1e-3


def test_refinement_in_time_grid():
    coarse = optimize_uninverted(0.7, M=32, restarts=0)
    fine = optimize_uninverted(0.7, M=64, restarts=0, init=coarse.martingale)
    assert abs(fine.value.total - coarse.value.total) < 5e-4


def test_measure_initialization():
    assert np.all(martingale_from_measure(DiscreteMeasure.dirac(0.0), 0.0).terminal_values() == 0)
    beta = 0.3
    warm_start = martingale_from_measure(DiscreteMeasure.dirac(0.0), beta)
    assert warm_start.consistency_error(0, 64) < 1e-8
    cold = optimize_uninverted(beta, restarts=0)
    warm = optimize_uninverted(beta, restarts=0, init=warm_start)
    assert cold.converged and warm.converged
    assert warm.nfev <= cold.nfev / 3
    assert abs(warm.value.total - cold.value.total) <= 1e-6


def test_alg_threshold_feasible_and_scaled():
    res = alg_threshold(sk_model(), M=128, restarts=1)
    assert res.residual < 1e-3 and not res.flagged
    assert np.max(np.abs(res.martingale.s - res.martingale.times)) < 1e-3
    doubled = alg_threshold(mixed_model({2: 4.0}), M=128, restarts=1)
    assert doubled.value == pytest.approx(2 * res.value, rel=1e-12)
    with pytest.raises(ModelError):
        alg_threshold(bipartite_model())
    with pytest.raises(ModelError):
        alg_threshold(mixed_model({3: 1.0}))
