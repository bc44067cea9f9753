"""Un-inverted martingale functional, its optimization, and the ALG threshold.

A MarkovMartingale is alpha_t = m(v(t), X_{v(t)}) where v is a nondecreasing
clock with v(0) = 0, v(1) = 1 and X is Brownian motion tilted by cosh(kappa x)
(the drift kappa tanh(kappa X) keeps X adapted to the driving Brownian motion).
With tau = 1 - v and A = heat_tau(a),

    m(v, x) = (1 + tanh kx)/2 A(x + k tau) + (1 - tanh kx)/2 A(x - k tau),

and X_v has law (N(k v, v) + N(-k v, v))/2.  The terminal function a is a sum
of erf terms (smoothed in closed form) plus a residual on a periodic grid
(smoothed spectrally).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import erf, xlogy

from .model import ModelError
from .parallel import ordered_map
from .parisi import DiscreteMeasure, gauss_trapezoid

GRID_POINTS = 1024


def phi_star(lam):
    """(1/2)[(1+l)log(1+l) + (1-l)log(1-l)] on [-1, 1], +inf outside."""
    lam = np.asarray(lam, dtype=float)
    c = np.clip(lam, -1, 1)
    out = 0.5 * (xlogy(1 + c, 1 + c) + xlogy(1 - c, 1 - c))
    out = np.where(np.abs(lam) <= 1, out, np.inf)
    return out if out.ndim else float(out)


def _xgrid(kappa):
    L = 16.0 + 2.0 * kappa
    dx = 2 * L / GRID_POINTS
    return -L + dx * np.arange(GRID_POINTS), L, dx


class MarkovMartingale:
    """Markov martingale on a time grid; see the module docstring for the model."""

    def __init__(self, times, clock, kappa=0.0, offset=0.0, erf_weights=(), erf_widths=(),
                 residual=None, params=None):
        self.times = np.asarray(times, dtype=float)
        v = np.asarray(clock, dtype=float)
        if self.times.ndim != 1 or v.shape != self.times.shape or self.times.size < 2:
            raise ValueError("times and clock must be 1-D arrays of equal length >= 2")
        if abs(self.times[0]) > 1e-15 or abs(self.times[-1] - 1) > 1e-12 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase from 0 to 1")
        if abs(v[0]) > 1e-12 or abs(v[-1] - 1) > 1e-9 or np.any(np.diff(v) < -1e-15):
            raise ValueError("clock must be nondecreasing from 0 to 1")
        self.clock_values = np.clip(np.maximum.accumulate(v), 0, 1)
        self.clock_values[0], self.clock_values[-1] = 0.0, 1.0
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
        self.kappa = float(kappa)
        self.offset = float(offset)
        self.erf_weights = np.asarray(erf_weights, dtype=float)
        self.erf_widths = np.asarray(erf_widths, dtype=float)
        if self.erf_weights.shape != self.erf_widths.shape or np.any(self.erf_widths <= 0):
            raise ValueError("erf terms need matching positive widths")
        self.x, self.L, self.dx = _xgrid(self.kappa)
        if residual is not None:
            residual = np.asarray(residual, dtype=float)
            if residual.shape != self.x.shape:
                raise ValueError("residual must live on the martingale grid")
            if not np.any(residual):
                residual = None
        self.residual = residual
        self._rhat = None if residual is None else np.fft.fft(residual)
        self._k = 2 * np.pi * np.fft.fftfreq(GRID_POINTS, self.dx)
        self.params = params
        self._cache = {}
        a = self.terminal_values()
        if np.max(np.abs(a)) > 1 + 1e-9:
            raise ModelError("terminal values must lie in [-1, 1]")

    # construction ---------------------------------------------------------------

    @classmethod
    def from_terminal(cls, fn, times, clock, kappa=0.0, params=None):
        """Sample a terminal function on the grid; the far-field limits go into an erf term."""
        x, L, _ = _xgrid(kappa)
        a = np.asarray(fn(x), dtype=float)
        lo, hi = float(a[0]), float(fn(np.array([L]))[0])
        c0, w = (hi + lo) / 2, (hi - lo) / 2
        res = a - c0 - w * erf(x / math.sqrt(2))
        return cls(times, clock, kappa, c0, [w], [1.0], res, params)

    @classmethod
    def from_erf(cls, weights, widths, times, clock, kappa=0.0, offset=0.0):
        return cls(times, clock, kappa, offset, weights, widths)

    @classmethod
    def zero(cls, M=16):
        t = np.linspace(0, 1, M + 1)
        return cls(t, t)

    def to_dict(self):
        return {
            "times": self.times.tolist(), "clock": self.clock_values.tolist(), "kappa": self.kappa,
            "offset": self.offset, "erf_weights": self.erf_weights.tolist(),
            "erf_widths": self.erf_widths.tolist(),
            "grid": {"x_min": float(self.x[0]), "dx": self.dx, "points": GRID_POINTS},
            "residual": None if self.residual is None else self.residual.tolist(),
            "terminal": self.terminal_values()[:: GRID_POINTS // 512].tolist(),
            "params": None if self.params is None else list(map(float, self.params)),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["times"], d["clock"], d.get("kappa", 0.0), d.get("offset", 0.0),
                   d.get("erf_weights", ()), d.get("erf_widths", ()), d.get("residual"),
                   d.get("params"))

    @property
    def analytic(self):
        return self.residual is None and self.kappa == 0

    # heat smoothing -----------------------------------------------------------

    def _erf_part(self, tau, y, deriv=False):
        out = np.zeros_like(y) if deriv else np.full_like(y, self.offset)
        for w, s in zip(self.erf_weights, self.erf_widths):
            c = s * s + tau
            if deriv:
                out += w * math.sqrt(2 / (math.pi * c)) * np.exp(-y * y / (2 * c))
            else:
                out += w * erf(y / math.sqrt(2 * c))
        return out

    def _heat_grid(self, tau, shift):
        """(A, A') at x + shift on the grid."""
        y = self.x + shift
        A, dA = self._erf_part(tau, y), self._erf_part(tau, y, True)
        if self._rhat is not None:
            f = self._rhat * np.exp(-self._k**2 * tau / 2 + 1j * self._k * shift)
            A = A + np.fft.ifft(f).real
            dA = dA + np.fft.ifft(1j * self._k * f).real
        return A, dA

    def _heat_at(self, tau, y):
        """(A, A') at arbitrary points, residual by exact trigonometric evaluation."""
        y = np.asarray(y, dtype=float)
        A, dA = self._erf_part(tau, y), self._erf_part(tau, y, True)
        if self._rhat is not None:
            damp = self._rhat * np.exp(-self._k**2 * tau / 2) / GRID_POINTS
            flat = y.ravel()
            ra, rd = np.empty_like(flat), np.empty_like(flat)
            for i in range(0, flat.size, 256):
                ph = np.exp(1j * np.outer(flat[i:i + 256] - self.x[0], self._k))
                ra[i:i + 256] = (ph @ damp).real
                rd[i:i + 256] = (ph @ (1j * self._k * damp)).real
            A, dA = A + ra.reshape(y.shape), dA + rd.reshape(y.shape)
        return A, dA

    @staticmethod
    def _tilt(kappa, tau, y, plus, minus):
        (Ap, dAp), (Am, dAm) = plus, minus
        th = np.tanh(kappa * y)
        m = 0.5 * (1 + th) * Ap + 0.5 * (1 - th) * Am
        dm = 0.5 * (1 + th) * dAp + 0.5 * (1 - th) * dAm + 0.5 * kappa * (1 - th * th) * (Ap - Am)
        return m, dm

    def regression_grid(self, v):
        """(m(v, x), d/dx m(v, x)) on the x-grid."""
        key = float(v)
        if key not in self._cache:
            tau = 1.0 - key
            s = self.kappa * tau
            plus = self._heat_grid(tau, s)
            minus = plus if s == 0 else self._heat_grid(tau, -s)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = self._tilt(self.kappa, tau, self.x, plus, minus)
        return self._cache[key]

    def regression_at(self, v, y):
        """(m, dm) at clock value v and arbitrary points y, without grid interpolation."""
        tau = 1.0 - float(v)
        y = np.asarray(y, dtype=float)
        s = self.kappa * tau
        plus = self._heat_at(tau, y + s)
        minus = plus if s == 0 else self._heat_at(tau, y - s)
        return self._tilt(self.kappa, tau, y, plus, minus)

    # accessors used by the incremental algorithm -----------------------------------

    def terminal_values(self):
        a = self._erf_part(0.0, self.x)
        if self.residual is not None:
            a = a + self.residual
        return a

    def clock(self, t):
        return np.interp(t, self.times, self.clock_values)

    def slope(self, t, y):
        v = float(self.clock(t))
        if self.analytic:
            return self._erf_part(1.0 - v, np.asarray(y, dtype=float), True)
        _, dm = self.regression_grid(v)
        return np.interp(y, self.x, dm)

    def value(self, t, y):
        v = float(self.clock(t))
        if self.analytic:
            return self._erf_part(1.0 - v, np.asarray(y, dtype=float))
        m, _ = self.regression_grid(v)
        return np.interp(y, self.x, m)

    def second_moment(self, t):
        return float(np.interp(t, self.times, self.s))

    # moments --------------------------------------------------------------------

    def _law_weights(self, v):
        """Grid weights of X_v ~ (N(kv, v) + N(-kv, v))/2, one row per clock value."""
        v = np.asarray(v, dtype=float)[:, None]
        c = self.kappa * v
        x = self.x[None, :]
        p = 0.5 * (np.exp(-(x - c) ** 2 / (2 * v)) + np.exp(-(x + c) ** 2 / (2 * v)))
        return p * (self.dx / np.sqrt(2 * math.pi * v))

    def _narrow_expect(self, v, values):
        """E f(X_v) for laws too narrow for the grid: Gauss nodes and a local spline of f."""
        from scipy.interpolate import CubicSpline

        if v <= 0:
            return float(CubicSpline(self.x, values)(0.0))
        z, w = gauss_trapezoid(241)
        c, r = self.kappa * v, math.sqrt(v)
        pts = np.concatenate([c + r * z, -c + r * z])
        lo, hi = np.searchsorted(self.x, [pts.min(), pts.max()])
        sl = slice(max(lo - 8, 0), min(hi + 8, self.x.size))
        return float(np.concatenate([w, w]) @ CubicSpline(self.x[sl], values[sl])(pts) / 2)

    def _all_regressions(self, v):
        """(m, dm) on the grid for a vector of clock values, one batched FFT pass."""
        tau = (1.0 - np.asarray(v, dtype=float))[:, None]
        sh = self.kappa * tau
        th = np.tanh(self.kappa * self.x)[None, :]
        out = []
        for sgn in (1.0, -1.0):
            y = self.x[None, :] + sgn * sh
            A = np.full(np.broadcast_shapes(y.shape, tau.shape), self.offset)
            dA = np.zeros_like(A)
            for w, s in zip(self.erf_weights, self.erf_widths):
                c = s * s + tau
                A += w * erf(y / np.sqrt(2 * c))
                dA += w * np.sqrt(2 / (math.pi * c)) * np.exp(-y * y / (2 * c))
            if self._rhat is not None:
                k = self._k[: GRID_POINTS // 2 + 1][None, :]
                f = self._rhat[None, : GRID_POINTS // 2 + 1] * np.exp(-k**2 * tau / 2 + 1j * k * sgn * sh)
                A += np.fft.irfft(f, GRID_POINTS, axis=1)
                dA += np.fft.irfft(1j * k * f, GRID_POINTS, axis=1)
            out.append((A, dA))
            if self.kappa == 0:
                out.append((A, dA))
                break
        (Ap, dAp), (Am, dAm) = out
        m = 0.5 * (1 + th) * Ap + 0.5 * (1 - th) * Am
        dm = 0.5 * (1 + th) * dAp + 0.5 * (1 - th) * dAm + 0.5 * self.kappa * (1 - th * th) * (Ap - Am)
        return m, dm

    def _moments(self):
        if "moments" in self._cache:
            return self._cache["moments"]
        v = self.clock_values
        if self.analytic:
            w, s2 = self.erf_weights, self.erf_widths**2
            den = np.sqrt(np.outer(1 + s2, 1 + s2))
            S = np.array([self.offset**2 + (2 / math.pi) * w @ np.arcsin(vk / den) @ w for vk in v])
            e = np.full(v.shape, float(np.sum(w * np.sqrt(2 / math.pi) / np.sqrt(1 + s2))))
        else:
            m, dm = self._all_regressions(v)
            wide = np.sqrt(v) >= 12 * self.dx
            S, e = np.empty_like(v), np.empty_like(v)
            if wide.any():
                P = self._law_weights(v[wide])
                S[wide] = np.sum(P * m[wide] ** 2, axis=1)
                e[wide] = np.sum(P * dm[wide], axis=1)
            for k in np.flatnonzero(~wide):
                S[k] = self._narrow_expect(v[k], m[k] ** 2)
                e[k] = self._narrow_expect(v[k], dm[k])
        self._cache["moments"] = (S, e)
        return S, e

    @property
    def s(self):
        """E[alpha_{t_k}^2] on the time grid."""
        return self._moments()[0]

    def cross_moment(self):
        """E[alpha_1 B_1] = int sqrt(v'(t)) E[d_x m(v(t), X_{v(t)})] dt, trapezoid on the grid."""
        _, e = self._moments()
        dv, dt = np.diff(self.clock_values), np.diff(self.times)
        return float(np.sum(np.sqrt(dv * dt) * (e[:-1] + e[1:]) / 2))

    def entropy(self):
        a = np.clip(self.terminal_values(), -1, 1)
        return float(np.sum(self._law_weights([1.0])[0] * phi_star(a)))

    def consistency_error(self, j, k, xs=None, nodes=1201):
        """max |m(t_j, x) - E[m(t_k, X_{v_k}) | X_{v_j} = x]| by independent Gauss quadrature."""
        if xs is None:
            xs = np.linspace(-4, 4, 17)
        vj, vk = self.clock_values[j], self.clock_values[k]
        d = vk - vj
        lhs = self.regression_at(vj, xs)[0]
        if d <= 0:
            return float(np.max(np.abs(lhs - self.regression_at(vk, xs)[0])))
        z, w = gauss_trapezoid(nodes)
        y = xs[:, None] + math.sqrt(d) * z[None, :]
        mk = self.regression_at(vk, y)[0]
        # Brownian step reweighted by the cosh tilt
        wt = np.cosh(self.kappa * y) / (np.cosh(self.kappa * xs)[:, None] * math.exp(self.kappa**2 * d / 2))
        rhs = (mk * wt) @ w
        return float(np.max(np.abs(lhs - rhs)))


# evaluation -------------------------------------------------------------------------

@dataclass
class UninvertedValue:
    linear: float
    entropy: float
    correction: float
    total: float
    cross: float
    sup_time: float
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {"linear": self.linear, "entropy": self.entropy, "correction": self.correction,
                "total": self.total, "E_alpha1_B1": self.cross, "sup_time": self.sup_time,
                "warnings": list(self.warnings)}


def _tail_integrals(times, g):
    """I_k = int_{t_k}^1 g(s) ds for g linear between grid points."""
    seg = np.diff(times) * (g[:-1] + g[1:]) / 2
    return np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])


def evaluate_uninverted(alpha, beta):
    """beta sqrt2 E[a_1 B_1] - E phi*(a_1) - beta^2 sup_t int_t^1 (s - E a_s^2) ds."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    msgs = []
    a = alpha.terminal_values()
    # phi* has an infinite slope at +-1; flag terminals that saturate abruptly where X_1 has mass
    jump = np.abs(np.gradient(a))
    if np.any((np.abs(a) > 1 - 1e-6) & (jump > 1e-2) & (np.abs(alpha.x) < 8)):
        msgs.append("terminal function is steep near |a| = 1 relative to the grid; entropy quadrature is coarse")
    cross = alpha.cross_moment()
    ent = alpha.entropy()
    tails = _tail_integrals(alpha.times, alpha.times - alpha.s)
    k = int(np.argmax(tails))
    corr = beta**2 * max(float(tails[k]), 0.0)
    lin = beta * math.sqrt(2) * cross
    for m in msgs:
        warnings.warn(m)
    return UninvertedValue(lin, ent, corr, lin - ent - corr, cross, float(alpha.times[k]), msgs)


# optimization over the tanh family -------------------------------------------------

_WIDTHS = (0.5, 2.0)


def tanh_family(theta, M):
    """a(x) = tanh(c1 x + c2 tanh(x/0.5) + c3 tanh(x/2)), tilt kappa, clock t^gamma.

    theta = (c1, c2, c3, kappa, log gamma); the first four enter through
    absolute values so a is odd and nondecreasing.
    """
    c1, c2, c3, kap = (abs(float(v)) for v in theta[:4])
    gam = math.exp(float(np.clip(theta[4], -2.5, 2.5)))
    t = np.linspace(0, 1, M + 1)

    def a(x):
        return np.tanh(c1 * x + c2 * np.tanh(x / _WIDTHS[0]) + c3 * np.tanh(x / _WIDTHS[1]))

    return MarkovMartingale.from_terminal(a, t, t**gam, kap, params=tuple(map(float, theta)))


@dataclass
class UninvertedFit:
    martingale: MarkovMartingale
    value: UninvertedValue
    nfev: int
    converged: bool

    def __iter__(self):
        return iter((self.martingale, self.value))


def _family_value(theta, beta, M):
    try:
        return evaluate_uninverted(tanh_family(theta, M), beta).total
    except (ModelError, ValueError, FloatingPointError):
        return -np.inf


def optimize_uninverted(beta, M=64, restarts=4, seed=0, init=None, maxfev=1500, threads=None):
    """Maximize the functional over the tanh family by Nelder-Mead with restarts.

    Without `init` the first start is uninformed (a = tanh x, no tilt, v = t).
    `init` is a parameter vector or a martingale carrying one (e.g. from
    martingale_from_measure); informed starts get a tighter initial simplex.
    The first restart is the high-temperature guess c1 = kappa = sqrt2 beta.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0:
        alpha = MarkovMartingale.zero(M)
        return UninvertedFit(alpha, evaluate_uninverted(alpha, 0.0), 0, True)
    if isinstance(init, MarkovMartingale):
        init = init.params
    rng = np.random.default_rng(seed)
    b = math.sqrt(2) * beta
    starts = [(np.array(init, float), 0.02) if init is not None else (np.array([1.0, 0, 0, 0, 0]), 0.1)]
    if restarts:
        starts.append((np.array([b, 0.0, 0.0, b, 0.0]), 0.1))
    for _ in range(restarts - 1):
        starts.append((np.array([rng.uniform(0, 2 * b + 1), rng.uniform(0, 1), rng.uniform(0, 1),
                                 rng.uniform(0, 2 * b), rng.normal(0, 0.5)]), 0.1))

    def run(start):
        x0, scale = start
        simplex = [x0] + [x0 + np.eye(5)[i] * (scale * max(abs(x0[i]), 0.5)) for i in range(5)]
        return minimize(lambda th: -_family_value(th, beta, M), x0, method="Nelder-Mead",
                        options={"maxfev": maxfev, "xatol": 1e-4, "fatol": 1e-10,
                                 "initial_simplex": np.array(simplex)})

    results = ordered_map(run, starts, threads)
    best = min(results, key=lambda r: (r.fun, tuple(r.x)))
    nfev = sum(r.nfev for r in results)
    if not best.success:
        warnings.warn("uninverted optimizer hit its evaluation cap; returning best found")
    alpha = tanh_family(best.x, M)
    return UninvertedFit(alpha, evaluate_uninverted(alpha, beta), int(nfev), bool(best.success))


def martingale_from_measure(mu, beta, M=64):
    """Initialization heuristic from a Parisi measure.

    d_x Phi(1, x) = tanh x, rescaled to the variance 2 beta^2 of the field, gives
    the terminal tanh(sqrt2 beta x); the tilt sqrt2 beta mu({0}) and the clock
    v = t complete a member of the tanh family (consistent by construction).
    """
    if beta == 0:
        return MarkovMartingale.zero(M)
    b = math.sqrt(2) * beta
    atoms, weights = np.asarray(mu.atoms), np.asarray(mu.weights)
    mass0 = float(weights[atoms <= 1e-12].sum())
    return tanh_family((b, 0.0, 0.0, b * mass0, 0.0), M)


def random_martingale(rng, M=32):
    """A random member of either family, for weak-duality sampling."""
    t = np.linspace(0, 1, M + 1)
    if rng.random() < 0.5:
        theta = (rng.uniform(0, 3), rng.uniform(0, 1.5), rng.uniform(0, 1.5), rng.uniform(0, 2), rng.normal(0, 0.7))
        return tanh_family(theta, M)
    J = int(rng.integers(1, 4))
    w = rng.dirichlet(np.ones(J)) * rng.uniform(0.2, 1.0)
    s = np.exp(rng.uniform(np.log(0.05), np.log(3.0), J))
    return MarkovMartingale.from_erf(w, s, t, t ** math.exp(rng.normal(0, 0.5)))


# ALG --------------------------------------------------------------------------------

def _erf_second_moment(w, s, v):
    den = np.sqrt(np.outer(1 + s**2, 1 + s**2))
    return (2 / math.pi) * np.einsum("i,kij,j->k", w, np.arcsin(np.asarray(v)[:, None, None] / den), w)


def _invert_clock(w, s, t):
    """v(t) = S^{-1}(t) by vectorized bisection, capped at 1 once t exceeds S(1)."""
    lo, hi = np.zeros_like(t), np.ones_like(t)
    for _ in range(60):
        mid = (lo + hi) / 2
        below = _erf_second_moment(w, s, mid) < t
        lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
    v = (lo + hi) / 2
    v[0], v[-1] = 0.0, 1.0
    return np.maximum.accumulate(v)


@dataclass
class AlgResult:
    value: float
    martingale: MarkovMartingale
    residual: float
    flagged: bool
    rounds: list

    def as_dict(self):
        return {"ALG": self.value, "constraint_residual": self.residual, "flagged": self.flagged,
                "rounds": self.rounds, "erf_weights": self.martingale.erf_weights.tolist(),
                "erf_widths": self.martingale.erf_widths.tolist()}


def alg_threshold(model, M=256, restarts=4, seed=0, terms=3, min_width=1e-4, tol=1e-3, threads=None):
    """Maximize sqrt2 E[a_1 B_1] subject to |a_1| <= 1 and E[a_t^2] = t.

    Terminal a = sum_j w_j erf(x / (sqrt2 s_j)) with w on the simplex; the clock
    inverts t -> S(v) = E[m(v, B_v)^2], which enforces the constraint wherever
    S(1) >= t, so the quadratic penalty only has to push S(1) to 1.  Penalty
    weights grow by 10x over 5 rounds of Nelder-Mead.  Quadratic mixtures
    xi = c r^2 scale the answer by sqrt(c).
    """
    pp = model.mixture.pure_power() if model.species_count == 1 else None
    if pp is None or pp[1] != 2:
        raise ModelError("alg_threshold needs a single-species quadratic model")
    c = pp[0]
    t = np.linspace(0, 1, M + 1)
    dt = np.diff(t)

    def unpack(th):
        w = np.exp(np.concatenate([th[:terms - 1], [0.0]]))
        w /= w.sum()
        s = min_width + np.exp(np.clip(th[terms - 1:], -30, 5))
        return w, s

    def parts(th):
        w, s = unpack(th)
        v = _invert_clock(w, s, t)
        S = _erf_second_moment(w, s, v)
        e = float(np.sum(w * np.sqrt(2 / math.pi) / np.sqrt(1 + s**2)))
        lin = math.sqrt(2) * e * float(np.sum(np.sqrt(np.diff(v) * dt)))
        return lin, S - t, w, s, v

    rng = np.random.default_rng(seed)
    starts = [np.concatenate([np.zeros(terms - 1), np.log(np.geomspace(1e-3, 0.3, terms))])]
    for _ in range(restarts):
        starts.append(np.concatenate([rng.normal(0, 1, terms - 1), rng.uniform(-9, 0, terms)]))

    def run(x0):
        x = x0
        hist = []
        for r in range(5):
            pen = 10.0 ** (r + 1)
            res = minimize(lambda th: -parts(th)[0] + pen * float(np.sum(parts(th)[1] ** 2)), x,
                           method="Nelder-Mead", options={"maxfev": 400 * len(x), "xatol": 1e-9, "fatol": 1e-13})
            x = res.x
            lin, g, *_ = parts(x)
            hist.append({"penalty": pen, "value": lin, "residual": float(np.max(np.abs(g)))})
        return x, hist

    runs = ordered_map(run, starts, threads)

    def score(item):
        lin, g, *_ = parts(item[0])
        return (np.max(np.abs(g)) >= tol, -lin)

    x, hist = min(runs, key=score)
    lin, g, w, s, v = parts(x)
    resid = float(np.max(np.abs(g)))
    alpha = MarkovMartingale.from_erf(w, s, t, v)
    if resid >= tol:
        warnings.warn(f"ALG constraint residual {resid:.2e} exceeds tolerance")
    return AlgResult(math.sqrt(c) * lin, alpha, resid, resid >= tol, hist)
