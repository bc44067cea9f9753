"""Hamilton-Jacobi side: psi_1 on step paths, Hopf-Lax, and monotone schemes."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .model import ModelError
from .parisi import COARSE, FINE, DiscreteMeasure, GridConfig, cascade, gauss_trapezoid, log_cosh


def psi1_scalar(h, nodes=481):
    """h - E log cosh(sqrt(2h) Z), the single-spin enriched free energy."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("h must be nonnegative")
    z, w = gauss_trapezoid(nodes)
    vals = h - log_cosh(np.sqrt(2 * h)[..., None] * z) @ w
    return vals if vals.ndim else float(vals)


@dataclass(frozen=True)
class StepPath:
    """q(u) = values[k] on [mesh[k], mesh[k+1]); nondecreasing and nonnegative."""

    mesh: tuple
    values: tuple

    def __post_init__(self):
        u = np.asarray(self.mesh, dtype=float)
        q = np.asarray(self.values, dtype=float)
        if u.ndim != 1 or u.size != q.size + 1 or q.size == 0:
            raise ValueError("mesh must have one more entry than values")
        if abs(u[0]) > 1e-15 or abs(u[-1] - 1) > 1e-12 or np.any(np.diff(u) <= 0):
            raise ValueError("mesh must increase from 0 to 1")
        if np.any(q < 0) or np.any(np.diff(q) < -1e-15):
            raise ValueError("path values must be nonnegative and nondecreasing")
        object.__setattr__(self, "mesh", tuple(float(v) for v in u))
        object.__setattr__(self, "values", tuple(float(v) for v in np.maximum.accumulate(q)))

    @classmethod
    def constant(cls, h, K=1):
        return cls(tuple(np.linspace(0, 1, K + 1)), (float(h),) * K)

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mesh"]), tuple(d["values"]))

    def to_dict(self):
        return {"mesh": list(self.mesh), "values": list(self.values)}

    @property
    def lengths(self):
        return np.diff(self.mesh)

    def __add__(self, other):
        if not np.allclose(self.mesh, other.mesh):
            raise ValueError("paths must share a mesh")
        return StepPath(self.mesh, tuple(np.add(self.values, other.values)))

    def __call__(self, u):
        idx = np.searchsorted(self.mesh, u, side="right") - 1
        return np.asarray(self.values)[np.clip(idx, 0, len(self.values) - 1)]


def _psi1_levels(mesh, values):
    """Cascade levels (2 dq_k, u_{k-1}); the increment into q_k has exponent u_{k-1}."""
    q = np.concatenate([[0.0], values])
    return [(2 * (q[k + 1] - q[k]), float(mesh[k])) for k in range(len(values))]


def psi1_path(q, grid=FINE):
    """Ruelle-cascade recursion for a step path.

    X_K(x) = log cosh(sqrt2 x) - q_K; X_{k-1} = (1/u_{k-1}) log E exp(u_{k-1} X_k)
    over an increment of variance q_k - q_{k-1} (plain expectation when the
    exponent is 0); psi_1 = -X_0(0).  A constant path h gives psi1_scalar(h).
    """
    vals = np.asarray(q.values)
    if vals[-1] == 0:
        return 0.0
    x, rule = grid.resolve(vals[-1])
    slices = cascade(_psi1_levels(q.mesh, vals), x, rule)
    return float(vals[-1] - slices[0][0][0])


def path_measure_map(q):
    """Law of q(U), U uniform: atoms are the distinct values, weights the mesh lengths."""
    vals = np.asarray(q.values)
    lengths = q.lengths
    atoms, inv = np.unique(vals, return_inverse=True)
    weights = np.bincount(inv, weights=lengths)
    return DiscreteMeasure.build(atoms, weights)


def measure_path_map(mu, mesh=None):
    """Inverse-cdf path of mu; by default on the mesh of its cumulative weights."""
    cum = np.concatenate([[0.0], np.cumsum(mu.weights)])
    cum[-1] = 1.0
    if mesh is None:
        return StepPath(tuple(cum), tuple(mu.atoms))
    mesh = np.asarray(mesh, dtype=float)
    mid = (mesh[:-1] + mesh[1:]) / 2
    idx = np.searchsorted(cum[1:], mid, side="left")
    return StepPath(tuple(mesh), tuple(np.asarray(mu.atoms)[np.minimum(idx, len(mu.atoms) - 1)]))


def psi1_measure(mu, grid=FINE):
    """The concave reparametrization psi~_1(mu) = psi_1(inverse cdf of mu)."""
    return psi1_path(measure_path_map(mu), grid)


# Hopf-Lax ------------------------------------------------------------------------

def xi_star(model, s):
    """Convex dual sup_{r >= 0} (r s - xi(r)) of a single-species mixture."""
    if model.species_count != 1:
        raise ModelError("xi_star needs a single-species model")
    mix = model.mixture
    s = float(s)
    if s <= mix.derivative(0.0):
        return float(-mix(0.0))
    pp = mix.pure_power()
    if pp is not None and pp[1] >= 2:
        c, p = pp
        r = (s / (c * p)) ** (1 / (p - 1))
        return r * s - c * r**p
    if mix.degree < 2:
        raise ModelError("xi is not superlinear; the dual is infinite")
    hi = 1.0
    while mix.derivative(hi) < s:
        hi *= 2
    r = brentq(lambda r: mix.derivative(r) - s, 0.0, hi, xtol=1e-14)
    return r * s - float(mix(r))


@dataclass
class HopfLaxResult:
    value: float
    increment: StepPath
    at_zero: float
    converged: bool


def hopf_lax(model, t, q=None, K=32, restarts=4, seed=0, grid=COARSE, maxiter=200):
    """sup over nondecreasing q' >= 0 on the mesh of q of psi_1(q + q') - t sum_k xi*(q'_k/t) du_k.

    Increments of q' are the variables (nonnegative boxes for L-BFGS-B with
    finite-difference gradients).  Starts: q' = 0 plus `restarts` random ones.
    """
    if model.species_count != 1:
        raise ModelError("hopf_lax needs a single-species model")
    if t <= 0:
        raise ValueError("t must be positive")
    if q is None:
        q = StepPath.constant(0.0, K)
    mesh = np.asarray(q.mesh)
    du = np.diff(mesh)
    base = np.asarray(q.values)
    n = base.size

    def value(d):
        qp = np.cumsum(np.maximum(d, 0.0))
        path = StepPath(tuple(mesh), tuple(base + qp))
        pen = t * sum(xi_star(model, v / t) * w for v, w in zip(qp, du))
        return psi1_path(path, grid) - pen

    # scale of useful increments: q'/t ~ xi'(1)
    scale = t * max(float(model.mixture.derivative(1.0)), 1.0)
    rng = np.random.default_rng(seed)
    starts = [np.zeros(n)]
    for _ in range(restarts):
        starts.append(rng.dirichlet(np.ones(n)) * rng.uniform(0, scale))
    at_zero = value(np.zeros(n))
    best_val, best_d, ok = at_zero, np.zeros(n), True
    for d0 in starts:
        res = minimize(lambda d: -value(d), d0, method="L-BFGS-B", bounds=[(0, None)] * n,
                       options={"maxiter": maxiter, "eps": 1e-7})
        ok &= bool(res.success)
        if -res.fun > best_val:
            best_val, best_d = -res.fun, res.x
    if not ok:
        warnings.warn("Hopf-Lax inner optimizer did not report convergence")
    inc = StepPath(tuple(mesh), tuple(np.cumsum(np.maximum(best_d, 0))))
    return HopfLaxResult(float(best_val), inc, float(at_zero), ok)


# monotone schemes -------------------------------------------------------------------

@dataclass
class HJField:
    dimension: int
    grids: tuple = field(repr=False)
    times: np.ndarray = field(repr=False)
    values: list = field(repr=False)  # snapshots aligned with times
    dt: float = 0.0
    warnings: list = field(default_factory=list)

    def at(self, t, h):
        """Value at a saved time (nearest) and grid point (multilinear interpolation)."""
        k = int(np.argmin(np.abs(self.times - t)))
        f = self.values[k]
        if self.dimension == 1:
            return float(np.interp(h, self.grids[0], f))
        from scipy.interpolate import RegularGridInterpolator
        return float(RegularGridInterpolator(self.grids, f)(np.atleast_2d(h))[0])

    def gradients(self, k=-1):
        f = self.values[k]
        return np.gradient(f, *self.grids) if self.dimension == 2 else [np.gradient(f, self.grids[0])]

    def rows(self):
        """(t, h..., f) rows for CSV output."""
        out = []
        for t, f in zip(self.times, self.values):
            if self.dimension == 1:
                out += [(t, h, v) for h, v in zip(self.grids[0], f)]
            else:
                H1, H2 = np.meshgrid(*self.grids, indexing="ij")
                out += [(t, a, b, v) for a, b, v in zip(H1.ravel(), H2.ravel(), f.ravel())]
        return out


def _time_grid(t_max, dt_max, save_times):
    n = max(1, int(math.ceil(t_max / dt_max - 1e-12)))
    dt = t_max / n
    save = sorted(set([0.0, t_max] + [s for s in (save_times or []) if 0 < s < t_max]))
    save_steps = sorted({int(round(s / dt)) for s in save})
    return n, dt, save_steps


def solve_hj_scalar(model, t_max, dh=0.01, h_max=4.0, cfl=0.9, initial=None, save_times=None, scheme="llf"):
    """Monotone Lax-Friedrichs scheme for f_t = xi(f_h), f(0) = psi1_scalar.

    scheme "llf" uses local wave speeds |xi'| over each cell's two one-sided
    slopes, "lf" a global one.  Characteristics run toward h = 0, which is an
    outflow boundary (one-sided slope); the far boundary uses a linear ghost.
    """
    if model.species_count != 1:
        raise ModelError("solve_hj_scalar needs a single-species model")
    h = dh * np.arange(int(round(h_max / dh)) + 1)
    f = psi1_scalar(h) if initial is None else np.asarray(initial(h) if callable(initial) else initial, float).copy()
    xi = model.mixture
    p0 = np.diff(f) / dh
    pmax = max(1.0, float(np.abs(p0).max()))
    theta = float(np.max(np.abs(xi.derivative(np.linspace(-pmax, pmax, 201)))))
    n, dt, save_steps = _time_grid(t_max, cfl * dh / max(theta, 1e-12), save_times)
    snaps, times = [], []
    if 0 in save_steps:
        snaps.append(f.copy())
        times.append(0.0)
    for step in range(1, n + 1):
        ghost = 2 * f[-1] - f[-2]
        fe = np.concatenate([f, [ghost]])
        pr = np.diff(fe) / dh  # forward slopes, len n_h
        pl = np.concatenate([[pr[0]], pr[:-1]])  # backward slopes; outflow copy at h = 0
        if scheme == "llf":
            a = np.maximum(np.abs(xi.derivative(pl)), np.abs(xi.derivative(pr)))
        elif scheme == "lf":
            a = theta
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        f = f + dt * (xi((pl + pr) / 2) + a / 2 * (pr - pl))
        if step in save_steps:
            snaps.append(f.copy())
            times.append(step * dt)
    msgs = []
    if h_max - theta * t_max < 2.0:
        msgs.append("far boundary may influence h < 2")
    return HJField(1, (h,), np.array(times), snaps, dt, msgs)


def psi2(l1, l2, h1, h2):
    """Bipartite initial condition lambda_1 psi_1(h_1) + lambda_2 psi_1(h_2)."""
    return l1 * psi1_scalar(h1) + l2 * psi1_scalar(h2)


def solve_hj_bipartite(l1, l2, t_max, dh=0.02, h_max=4.0, cfl=0.9, initial=None, save_times=None):
    """Global Lax-Friedrichs scheme for f_t = f_{h1} f_{h2} on [0, h_max]^2.

    The viscosity coefficients are the largest |f_{h2}| and |f_{h1}| on the
    initial grid (gradients of psi_2 lie in [0, lambda_2] and [0, lambda_1]).
    """
    if abs(l1 + l2 - 1) > 1e-9 or l1 <= 0 or l2 <= 0:
        raise ModelError("species fractions must be positive and sum to 1")
    h = dh * np.arange(int(round(h_max / dh)) + 1)
    H1, H2 = np.meshgrid(h, h, indexing="ij")
    if initial is None:
        f = psi2(l1, l2, h[:, None], h[None, :])
    else:
        f = np.asarray(initial(H1, H2) if callable(initial) else initial, float).copy()
    p1 = np.diff(f, axis=0) / dh
    p2 = np.diff(f, axis=1) / dh
    th1 = max(float(np.abs(p2).max()), 1e-12)  # dH/dp1 = p2
    th2 = max(float(np.abs(p1).max()), 1e-12)
    n, dt, save_steps = _time_grid(t_max, cfl * dh / (th1 + th2), save_times)
    snaps, times = [], []
    if 0 in save_steps:
        snaps.append(f.copy())
        times.append(0.0)

    def slopes(f, axis):
        last = np.take(f, [-1], axis=axis)
        prev = np.take(f, [-2], axis=axis)
        fe = np.concatenate([f, 2 * last - prev], axis=axis)
        pr = np.diff(fe, axis=axis) / dh
        first = np.take(pr, [0], axis=axis)
        pl = np.concatenate([first, np.take(pr, range(pr.shape[axis] - 1), axis=axis)], axis=axis)
        return pl, pr

    for step in range(1, n + 1):
        a1, b1 = slopes(f, 0)
        a2, b2 = slopes(f, 1)
        ham = ((a1 + b1) / 2) * ((a2 + b2) / 2)
        f = f + dt * (ham + th1 / 2 * (b1 - a1) + th2 / 2 * (b2 - a2))
        if step in save_steps:
            snaps.append(f.copy())
            times.append(step * dt)
    msgs = []
    if h_max - max(th1, th2) * t_max < 1.0:
        msgs.append("far boundary may influence the reported region")
    return HJField(2, (h, h), np.array(times), snaps, dt, msgs)
