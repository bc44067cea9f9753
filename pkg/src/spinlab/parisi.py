"""Parisi PDE for atomic measures, the Parisi functional and its minimization."""

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize
from scipy.special import logsumexp

from .parallel import ordered_map

MERGE_TOL = 1e-9


@lru_cache(maxsize=None)
def gauss_hermite(n):
    """Nodes and weights for E f(Z), Z standard normal."""
    z, w = hermegauss(n)
    return z, w / math.sqrt(2 * math.pi)


@lru_cache(maxsize=None)
def gauss_trapezoid(n, z_max=12.0):
    """Uniform nodes on [-z_max, z_max] with Gaussian-density weights.

    For integrands analytic in a strip this converges geometrically in the
    spacing, and unlike Gauss-Hermite it does not degrade when the strip is
    narrow (log cosh(c z) for large c).
    """
    z = np.linspace(-z_max, z_max, n)
    w = np.exp(-z * z / 2)
    return z, w / w.sum()


def gaussian_rule(rule, n):
    if rule == "hermite":
        return gauss_hermite(n)
    if rule == "trapezoid":
        return gauss_trapezoid(n)
    raise ValueError(f"unknown quadrature rule {rule!r}")


def log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2 * ax)) - math.log(2)


@dataclass(frozen=True)
class GridConfig:
    """x-grid and quadrature settings; None means the beta-adaptive default."""

    dx: float = None
    x_max: float = None
    nodes: int = 241
    resolution: float = 0.01
    rule: str = "trapezoid"

    def resolve(self, scale2):
        """Nonnegative half of the symmetric grid for a cascade of total variance 2 * scale2."""
        x_max = self.x_max if self.x_max is not None else 12 + 6 * scale2
        dx = self.dx if self.dx is not None else self.resolution * max(1.0, math.sqrt(scale2))
        n = int(math.ceil(x_max / dx))
        return dx * np.arange(n + 1), gaussian_rule(self.rule, self.nodes)

    def halved(self, scale2=1.0):
        """Same grid with half the x-spacing."""
        x, _ = self.resolve(scale2)
        return replace(self, dx=(x[1] - x[0]) / 2, x_max=float(x[-1]))

    def doubled_nodes(self):
        return replace(self, nodes=2 * self.nodes - 1 if self.rule == "trapezoid" else 2 * self.nodes)


FINE = GridConfig()
COARSE = GridConfig(nodes=49, resolution=0.08)


class _Slice:
    """An even cascade slice stored on x >= 0; linear beyond the grid edge."""

    def __init__(self, x, values, grads):
        self.x, self.values, self.grads = x, values, grads
        self.spline = CubicSpline(x, values, bc_type=((1, 0.0), "not-a-knot"))
        self.edge = x[-1]

    def __call__(self, X):
        A = np.abs(X)
        out = self.spline(np.minimum(A, self.edge))
        over = A - self.edge
        if np.any(over > 0):
            out = out + np.where(over > 0, self.grads[-1] * over, 0.0)
        return out

    def grad(self, X):
        return np.sign(X) * np.interp(np.abs(X), self.x, self.grads)


class _LogCosh:
    def __call__(self, X):
        return log_cosh(X)

    def grad(self, X):
        return np.tanh(X)


def cascade(levels, x, rule):
    """Backward Cole-Hopf recursion from log cosh on the half grid x >= 0.

    levels: list of (variance, zeta) ordered from the root to the terminal slice.
    Each level maps F to x -> (1/zeta) log E exp(zeta F(x + sqrt(variance) Z)),
    or to E F(x + sqrt(variance) Z) when zeta = 0.  Returns the slices, root first.
    """
    z, w = rule
    logw = np.log(w)
    cur = _LogCosh()
    out = [(log_cosh(x), np.tanh(x))]
    for var, zeta in reversed(levels):
        if var <= 0:
            out.append(out[-1])
            continue
        X = x[:, None] + math.sqrt(var) * z[None, :]
        F = cur(X)
        G = cur.grad(X)
        if zeta > 0:
            a = zeta * F + logw
            V = logsumexp(a, axis=1) / zeta
            p = np.exp(a - (zeta * V)[:, None])
        else:
            V = F @ w
            p = np.broadcast_to(w, F.shape)
        dV = np.sum(p * G, axis=1)
        dV[0] = 0.0
        out.append((V, dV))
        cur = _Slice(x, V, dV)
    return out[::-1]


@dataclass(frozen=True)
class DiscreteMeasure:
    """K-atomic probability measure on [0, 1] (or R_+ for path use)."""

    atoms: tuple
    weights: tuple

    def __post_init__(self):
        q = np.asarray(self.atoms, dtype=float).ravel()
        m = np.asarray(self.weights, dtype=float).ravel()
        if q.size == 0 or q.shape != m.shape:
            raise ValueError("atoms and weights must be nonempty and of equal length")
        if np.any(np.diff(q) <= 0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(m <= 0) or abs(m.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if q[0] < 0:
            raise ValueError("atoms must be nonnegative")
        object.__setattr__(self, "atoms", tuple(float(v) for v in q))
        object.__setattr__(self, "weights", tuple(float(v) for v in m))

    @classmethod
    def build(cls, atoms, weights):
        """Sort, merge atoms closer than 1e-9 and renormalize."""
        q = np.asarray(atoms, dtype=float)
        m = np.asarray(weights, dtype=float)
        order = np.argsort(q, kind="stable")
        q, m = q[order], m[order]
        keep_q, keep_m = [q[0]], [m[0]]
        for a, b in zip(q[1:], m[1:]):
            if a - keep_q[-1] < MERGE_TOL:
                keep_m[-1] += b
            else:
                keep_q.append(a)
                keep_m.append(b)
        keep_m = np.array(keep_m)
        pos = keep_m > 0
        keep_m = keep_m[pos] / keep_m[pos].sum()
        return cls(tuple(np.array(keep_q)[pos]), tuple(keep_m))

    @classmethod
    def dirac(cls, q):
        return cls((float(q),), (1.0,))

    @classmethod
    def from_dict(cls, d):
        return cls.build(d["atoms"], d["weights"])

    def to_dict(self):
        return {"atoms": list(self.atoms), "weights": list(self.weights)}

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.sum(np.array(self.weights) * (np.array(self.atoms) <= t[..., None]), axis=-1)

    def mix(self, other, a=0.5):
        return DiscreteMeasure.build(self.atoms + other.atoms,
                                     [a * w for w in self.weights] + [(1 - a) * w for w in other.weights])


def parisi_levels(mu, beta):
    """Cascade levels (variance, zeta) of the Parisi PDE for the atomic measure mu."""
    if mu.atoms[-1] > 1:
        raise ValueError("Parisi measures live on [0, 1]")
    b = sorted({0.0, 1.0, *mu.atoms})
    levels = []
    for lo, hi in zip(b[:-1], b[1:]):
        levels.append((2 * beta**2 * (hi - lo), float(mu.cdf(lo))))
    return levels, b


@dataclass
class ParisiSolution:
    beta: float
    measure: DiscreteMeasure
    x: np.ndarray = field(repr=False)  # x >= 0 half of the symmetric grid
    breakpoints: list
    phi: list = field(repr=False)
    dphi: list = field(repr=False)
    tail_flag: bool = False

    @property
    def value_at_origin(self):
        return float(self.phi[0][0])

    @property
    def full_x(self):
        """The symmetric grid; slices are even (phi) or odd (dphi) on it."""
        return np.concatenate([-self.x[:0:-1], self.x])

    def full_phi(self, k):
        return np.concatenate([self.phi[k][:0:-1], self.phi[k]])

    def full_dphi(self, k):
        return np.concatenate([-self.dphi[k][:0:-1], self.dphi[k]])

    def grad_at(self, k, X):
        return np.sign(X) * np.interp(np.abs(X), self.x, self.dphi[k])

    def diagnostics(self):
        return {"n_x": int(2 * self.x.size - 1), "dx": float(self.x[1] - self.x[0]), "x_max": float(self.x[-1]),
                "breakpoints": list(self.breakpoints), "max_abs_dphi": float(max(np.abs(d).max() for d in self.dphi)),
                "tail_flag": self.tail_flag}


def solve_parisi_pde(mu, beta, grid=FINE):
    """Exact per-interval Cole-Hopf solution of the Parisi PDE on a grid."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    mu = DiscreteMeasure.build(mu.atoms, mu.weights)
    levels, b = parisi_levels(mu, beta)
    x, rule = grid.resolve(beta**2)
    tail = 8 * math.sqrt(2) * beta > x[-1]
    if tail:
        warnings.warn("x_max is small relative to the cascade spread; boundary extrapolation may matter")
    slices = cascade(levels, x, rule)
    return ParisiSolution(beta, mu, x, b, [s[0] for s in slices], [s[1] for s in slices], tail)


def correction_integral(mu):
    """int_0^1 t mu([0, t]) dt = sum_k m_k (1 - q_k^2) / 2."""
    q = np.array(mu.atoms)
    return float(np.sum(np.array(mu.weights) * (1 - q * q)) / 2)


def parisi_functional(mu, beta, grid=FINE):
    if beta == 0:
        return 0.0
    sol = solve_parisi_pde(mu, beta, grid)
    return sol.value_at_origin - beta**2 * correction_integral(sol.measure)


def _decode(theta, K):
    a = np.clip(theta[:K], 0.0, 1.0)
    logits = np.concatenate([theta[K:], [0.0]])
    w = np.exp(logits - logits.max())
    return DiscreteMeasure.build(a, w / w.sum())


def _encode(mu, K):
    q = list(mu.atoms)
    m = list(mu.weights)
    while len(q) < K:  # pad by splitting the heaviest atom
        j = int(np.argmax(m))
        q.insert(j + 1, min(1.0, q[j] + 1e-3))
        m[j] /= 2
        m.insert(j + 1, m[j])
    m = np.array(m)
    return np.concatenate([q, np.log(m[:-1] / m[-1])])


@dataclass
class ParisiFit:
    measure: DiscreteMeasure
    value: float
    levels: list
    converged: bool = True

    def __iter__(self):
        return iter((self.measure, self.value))


def optimize_parisi(beta, K, restarts=8, seed=0, grid=FINE, search_grid=COARSE,
                    budget=60, stall_tol=1e-9, threads=None):
    """Minimize the Parisi functional over measures with at most K atoms.

    Levels K' = 1..K are solved in turn, each warm-started from the previous
    optimum by splitting its heaviest atom (Nelder-Mead, `budget` evaluations
    per parameter).  The chain stops early once two consecutive levels improve
    by less than `stall_tol`.  At the last level `restarts` random starts are
    screened with a third of the budget and the best is polished.  Search runs
    on `search_grid`; every candidate is re-scored on `grid`, and the best
    measure so far is kept, so reported values are nonincreasing in K.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if beta == 0:
        mu = DiscreteMeasure.dirac(0.0)
        return ParisiFit(mu, 0.0, [(k, 0.0) for k in range(1, K + 1)])
    rng = np.random.default_rng(seed)
    best = [None, np.inf]
    history = []
    level_ok = False

    def consider(mu, val):
        tie = best[0] is not None and abs(val - best[1]) <= 1e-14 and mu.atoms < best[0].atoms
        if val < best[1] - 1e-14 or tie:
            best[0], best[1] = mu, val

    def search(theta0, k, fev):
        res = minimize(lambda th: parisi_functional(_decode(th, k), beta, search_grid), theta0,
                       method="Nelder-Mead",
                       options={"maxfev": fev, "xatol": 1e-7, "fatol": 1e-12,
                                "initial_simplex": _simplex(theta0)})
        mu = _decode(res.x, k)
        return mu, parisi_functional(mu, beta, grid), res.success, res.x

    stalls = 0
    k_last = 1
    for k in range(1, K + 1):
        n = 2 * k - 1
        starts = [np.array([q]) for q in (0.0, 0.5, 0.9)] if best[0] is None else [_encode(best[0], k)]
        prev = best[1]
        results = ordered_map(lambda th: search(th, k, budget * n), starts, threads)
        level_ok = any(r[2] for r in results)
        for mu, val, _, _ in results:
            consider(mu, val)
        history.append((k, best[1]))
        k_last = k
        stalls = stalls + 1 if prev - best[1] < stall_tol else 0
        if stalls >= 2:
            break
    if restarts:
        k, n = k_last, 2 * k_last - 1
        starts = []
        for _ in range(restarts):
            q = np.sort(rng.uniform(0, 1, k))
            starts.append(np.concatenate([q, rng.normal(0, 1, k - 1)]))
        screened = ordered_map(lambda th: search(th, k, max(budget * n // 3, 20)), starts, threads)
        top = min(screened, key=lambda r: (r[1], r[0].atoms))
        consider(top[0], top[1])
        mu, val, ok, _ = search(top[3], k, budget * n)
        consider(mu, val)
        level_ok |= ok
        if history:
            history[-1] = (k, best[1])
    for k in range(k_last + 1, K + 1):
        history.append((k, best[1]))
    # a stalled chain counts as converged even if Nelder-Mead ran out of budget
    converged = bool(stalls >= 2 or level_ok)
    if not converged:
        warnings.warn("Parisi optimizer hit its evaluation cap; returning best found")
    return ParisiFit(best[0], best[1], history, converged)


def _simplex(theta0):
    n = theta0.size
    S = np.tile(theta0, (n + 1, 1))
    for i in range(n):
        S[i + 1, i] += 0.1 if i < (n + 1) // 2 else 0.5
    return S
