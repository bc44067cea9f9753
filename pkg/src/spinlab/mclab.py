"""Finite-N ground truth by exhaustive enumeration and disorder averaging."""

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .model import ModelError, hamiltonian, sample_disorder, sample_seed
from .parallel import ordered_map

ENUMERATION_CAP = 24
CHUNK_BITS = 16


class Convention(str, Enum):
    """PLAIN: (1/N) E log of the 2^-N-normalized partition function at inverse temperature beta.
    ENRICHED: minus the same at parameters (t, h), with the compensators that make it vanish at t=h=0.
    """

    PLAIN = "plain"
    ENRICHED = "enriched"


@dataclass(frozen=True)
class Params:
    convention: Convention
    beta: float = 0.0
    t: float = 0.0
    h: tuple = ()

    @classmethod
    def plain(cls, beta):
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        return cls(Convention.PLAIN, beta=float(beta))

    @classmethod
    def enriched(cls, t, h=0.0):
        h = tuple(float(x) for x in np.atleast_1d(h))
        if t < 0 or any(x < 0 for x in h):
            raise ValueError("t and h must be nonnegative")
        return cls(Convention.ENRICHED, t=float(t), h=h)

    def as_dict(self):
        if self.convention is Convention.PLAIN:
            return {"convention": "plain", "beta": self.beta}
        return {"convention": "enriched", "t": self.t, "h": list(self.h)}

    def _h(self, D):
        if len(self.h) == D:
            return np.array(self.h)
        if len(self.h) == 1:
            return np.full(D, self.h[0])
        raise ModelError(f"h has {len(self.h)} entries, model has {D} species")

    def log_weights(self, H, fields):
        if self.convention is Convention.PLAIN:
            return self.beta * H
        h = self._h(fields.shape[1])
        return math.sqrt(2 * self.t) * H + fields @ np.sqrt(2 * h)

    def free_energy(self, sample, log_z):
        """Per-sample free energy from log sum_sigma exp(log_weight)."""
        N = sample.N
        base = (log_z - N * math.log(2)) / N
        if self.convention is Convention.PLAIN:
            return base
        xi_self = float(sample.model.xi(sample.model.self_overlap(N)))
        h = self._h(len(sample.blocks))
        comp = self.t * xi_self + float(np.dot(sample.blocks, h)) / N
        return -(base - comp)


@dataclass
class FreeEnergyEstimate:
    mean: float
    std_error: float
    n_disorder_samples: int
    N: int
    convention: Convention
    params: dict = field(default_factory=dict)
    samples: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        return {"mean": self.mean, "std_error": self.std_error,
                "n_disorder_samples": self.n_disorder_samples, "N": self.N,
                "convention": self.convention.value, **self.params}


@dataclass
class GibbsObservable:
    label: str
    value: float
    error: float
    params: dict


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


# enumeration ------------------------------------------------------------------

def _check_cap(N, cap):
    if N > cap:
        raise ModelError(f"N={N} exceeds the enumeration cap {cap}")


def _config_chunks(N, fix_last=False):
    """Yield (B, N) float arrays of +-1 covering the cube (or half of it)."""
    free = N - 1 if fix_last else N
    total = 1 << free
    step = 1 << min(free, CHUNK_BITS)
    bits = np.arange(free, dtype=np.int64)
    for start in range(0, total, step):
        codes = np.arange(start, start + step, dtype=np.int64)
        S = 1.0 - 2.0 * ((codes[:, None] >> bits) & 1)
        if fix_last:
            S = np.hstack([S, np.ones((S.shape[0], 1))])
        yield S


def _moment_orders(sample):
    orders = sorted({sum(p) for p, c in sample.model.mixture.terms if c > 0} | {1, 2})
    if max(orders) > 3:
        raise ModelError("Gibbs moments are implemented for total degree <= 3")
    return [o for o in orders if o > 0]


class _Stream:
    """Streaming log-sum-exp of several log-weight vectors plus Gibbs moments."""

    def __init__(self, n_params, N, orders=()):
        self.M = np.full(n_params, -np.inf)
        self.Z = np.zeros(n_params)
        self.orders = tuple(orders)
        self.mom = {o: np.zeros((n_params,) + (N,) * o) for o in self.orders}

    def add(self, lw, S):
        new = np.maximum(self.M, lw.max(axis=1))
        scale = np.exp(self.M - new)
        w = np.exp(lw - new[:, None])
        self.Z = self.Z * scale + w.sum(axis=1)
        for o in self.orders:
            shaped = scale.reshape((-1,) + (1,) * o)
            if o == 1:
                upd = w @ S
            elif o == 2:
                upd = np.einsum("pb,bi,bj->pij", w, S, S, optimize=True)
            else:
                upd = np.einsum("pb,bi,bj,bk->pijk", w, S, S, S, optimize=True)
            self.mom[o] = self.mom[o] * shaped + upd
        self.M = new

    def log_z(self):
        return self.M + np.log(self.Z)

    def moments(self, o):
        return self.mom[o] / self.Z.reshape((-1,) + (1,) * o)


def _scan(sample, params, cap=ENUMERATION_CAP, moments=False):
    _check_cap(sample.N, cap)
    orders = _moment_orders(sample) if moments else ()
    st = _Stream(len(params), sample.N, orders)
    need_fields = any(p.convention is Convention.ENRICHED for p in params)
    for S in _config_chunks(sample.N):
        H = sample.energies(S)
        F = sample.species_fields(S) if need_fields else np.zeros((S.shape[0], len(sample.blocks)))
        lw = np.stack([p.log_weights(H, F) for p in params])
        st.add(lw, S)
    return st


def exact_log_partition(sample, beta, cap=ENUMERATION_CAP):
    """(1/N) log(2^-N sum_sigma exp(beta H_N(sigma))), exact."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    st = _scan(sample, [Params.plain(beta)], cap)
    return float((st.log_z()[0] - sample.N * math.log(2)) / sample.N)


def free_energies(sample, params, cap=ENUMERATION_CAP):
    """Per-sample free energies for several parameter sets in one enumeration pass."""
    st = _scan(sample, list(params), cap)
    return np.array([p.free_energy(sample, lz) for p, lz in zip(params, st.log_z())])


def _gibbs_summary(sample, st, k):
    """Exact <xi(R)>, <R_d> and <R_tot^2> for replica pairs at parameter index k."""
    N = sample.N
    D = len(sample.blocks)
    m1 = st.moments(1)[k]
    m2 = st.moments(2)[k]
    r = np.array([m1[sample.block(d)] @ m1[sample.block(d)] for d in range(D)]) / N
    xi_val = 0.0
    for p, c in sample.model.mixture.terms:
        slots = [d for d, e in enumerate(p) for _ in range(e)]
        P = len(slots)
        if P == 0:
            xi_val += c
            continue
        T = st.moments(P)[k]
        T = T[tuple(sample.block(d) for d in slots)]
        xi_val += c * float(np.sum(T * T)) / N**P
    return {"xi": xi_val, "R": r, "R2": float(np.sum(m2 * m2)) / N**2}


def _to_params(params):
    if isinstance(params, Params):
        return params
    if isinstance(params, dict):
        if "beta" in params:
            return Params.plain(params["beta"])
        return Params.enriched(params["t"], params.get("h", 0.0))
    if isinstance(params, tuple):
        return Params.enriched(*params)
    return Params.plain(float(params))


def gibbs_expectation(sample, params, observable="overlap", cap=ENUMERATION_CAP, pair_cap=14):
    """Exact two-replica Gibbs average <f(sigma, sigma')> for one disorder sample.

    `params` is a beta, a (t, h) tuple, or a Params.  Named observables:
    "overlap", "overlap2", "xi", "species_overlap:<d>".  A callable receives the
    per-species overlap array of shape (..., D) and is averaged by pair enumeration.
    """
    p = _to_params(params)
    N = sample.N
    if callable(observable):
        if N > pair_cap:
            raise ModelError(f"custom observables enumerate pairs; N={N} exceeds {pair_cap}")
        S = np.vstack(list(_config_chunks(N)))
        F = sample.species_fields(S)
        lw = p.log_weights(sample.energies(S), F)
        w = np.exp(lw - lw.max())
        w /= w.sum()
        total = 0.0
        for start in range(0, S.shape[0], 256):
            blk = S[start:start + 256]
            R = np.stack([blk[:, sample.block(d)] @ S[:, sample.block(d)].T
                          for d in range(len(sample.blocks))], axis=-1) / N
            total += w[start:start + 256] @ np.asarray(observable(R)) @ w
        return GibbsObservable(getattr(observable, "__name__", "custom"), float(total), 0.0, p.as_dict())
    st = _scan(sample, [p], cap, moments=True)
    g = _gibbs_summary(sample, st, 0)
    if observable == "overlap":
        val = float(g["R"].sum())
    elif observable == "overlap2":
        val = g["R2"]
    elif observable == "xi":
        val = g["xi"]
    elif isinstance(observable, str) and observable.startswith("species_overlap:"):
        d = int(observable.split(":")[1])
        if not 0 <= d < len(sample.blocks):
            raise ModelError(f"no species {d}")
        val = float(g["R"][d])
    else:
        raise ValueError(f"unknown observable {observable!r}")
    return GibbsObservable(str(observable), val, 0.0, p.as_dict())


# disorder averages --------------------------------------------------------------

def _quenched(model, N, params, n_samples, seed, threads=None, cap=ENUMERATION_CAP):
    params = list(params)

    def one(i):
        s = sample_disorder(model, N, sample_seed(seed, i))
        return free_energies(s, params, cap)

    return np.array(ordered_map(one, range(n_samples), threads)).reshape(n_samples, len(params))


def _estimate(values, N, p):
    mean, se = _mean_se(values)
    return FreeEnergyEstimate(mean, se, len(values), N, p.convention, p.as_dict(), np.asarray(values))


def quenched_free_energy(model, N, beta, n_samples, seed, threads=None, cap=ENUMERATION_CAP):
    """Disorder average of exact_log_partition (plain convention)."""
    p = Params.plain(beta)
    vals = _quenched(model, N, [p], n_samples, seed, threads, cap)[:, 0]
    return _estimate(vals, N, p)


def enriched_free_energy(model, N, t, h, n_samples, seed, threads=None, cap=ENUMERATION_CAP):
    """F_N(t, h) with the leading minus sign and the t xi(self-overlap) and N_d h_d compensators."""
    p = Params.enriched(t, h)
    vals = _quenched(model, N, [p], n_samples, seed, threads, cap)[:, 0]
    return _estimate(vals, N, p)


def quenched_sweep(model, N, params, n_samples, seed, threads=None, cap=ENUMERATION_CAP):
    """Several parameter sets on common disorder; returns one estimate per set."""
    params = [_to_params(p) for p in params]
    vals = _quenched(model, N, params, n_samples, seed, threads, cap)
    return [_estimate(vals[:, k], N, p) for k, p in enumerate(params)]


def extrapolate_inverse_n(Ns, means, ses):
    """Weighted least-squares fit mean = a + b/N; returns (a, se(a), b)."""
    Ns, means, ses = (np.asarray(v, dtype=float) for v in (Ns, means, ses))
    X = np.column_stack([np.ones_like(Ns), 1.0 / Ns])
    if not np.any(ses > 0):
        # exact inputs (e.g. beta = 0): plain least squares, no sampling error
        coef = np.linalg.lstsq(X, means, rcond=None)[0]
        return float(coef[0]), 0.0, float(coef[1])
    w = 1.0 / np.maximum(ses, 1e-12 * ses.max()) ** 2
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    coef = cov @ (X.T @ (w * means))
    return float(coef[0]), float(math.sqrt(cov[0, 0])), float(coef[1])


# derivative identities ------------------------------------------------------------

def _stencil(x, step):
    """Offsets and weights for first derivatives at steps (step, 2 step); one-sided near 0."""
    if x - 2 * step >= 0:
        return [(-1, -0.5), (1, 0.5)], [(-2, -0.5), (2, 0.5)]
    return [(0, -1.5), (1, 2.0), (2, -0.5)], [(0, -1.5), (2, 2.0), (4, -0.5)]


def derivative_identity_check(model, N, t, h, n_samples, seed, threads=None, cap=ENUMERATION_CAP):
    """Finite differences of the enriched free energy against Gibbs-overlap identities.

    Checks dF/dt = E<xi(R)>, dF/dh_d = E<R_d> and that the residual
    dF/dt - xi(dF/dh) equals E<xi(R)> - xi(E<R>).  Derivatives use common
    disorder for all stencil points; errors are paired standard errors.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    D = model.species_count
    h = np.broadcast_to(np.atleast_1d(np.asarray(h, dtype=float)), (D,)).copy()
    dt = 1e-3 * max(1.0, abs(t))
    dh = 1e-3 * np.maximum(1.0, np.abs(h))
    if dt < 1e-10 or np.any(dh < 1e-10):
        raise ValueError("finite-difference step underflow")

    plist = [Params.enriched(t, h)]
    index = {}

    def need(kind, off, d=None):
        key = (kind, off, d)
        if key not in index:
            if kind == "t":
                plist.append(Params.enriched(t + off * dt, h))
            else:
                hh = h.copy()
                hh[d] += off * dh[d]
                plist.append(Params.enriched(t, hh))
            index[key] = len(plist) - 1
        return index[key]

    t_sten = _stencil(t, dt)
    h_sten = [_stencil(h[d], dh[d]) for d in range(D)]
    for st in t_sten:
        for off, _ in st:
            if off:
                need("t", off)
    for d in range(D):
        for st in h_sten[d]:
            for off, _ in st:
                if off:
                    need("h", off, d)

    def one(i):
        s = sample_disorder(model, N, sample_seed(seed, i))
        st = _scan(s, plist, cap, moments=True)
        F = np.array([p.free_energy(s, lz) for p, lz in zip(plist, st.log_z())])
        g = _gibbs_summary(s, st, 0)

        def deriv(kind, sten, step, d=None):
            return sum(w * (F[0] if off == 0 else F[index[(kind, off, d)]]) for off, w in sten) / step

        row = [deriv("t", t_sten[0], dt), deriv("t", t_sten[1], 2 * dt), g["xi"]]
        for d in range(D):
            row += [deriv("h", h_sten[d][0], dh[d], d), deriv("h", h_sten[d][1], 2 * dh[d], d), g["R"][d]]
        return row

    rows = np.array(ordered_map(one, range(n_samples), threads))
    dFt, dFt2, X = rows[:, 0], rows[:, 1], rows[:, 2]
    dFh = rows[:, 3::3]
    dFh2 = rows[:, 4::3]
    R = rows[:, 5::3]

    rep = {"N": N, "t": t, "h": h.tolist(), "n_samples": n_samples, "step_t": dt, "step_h": dh.tolist()}
    rep["dF_dt"] = _mean_se(dFt)
    rep["gibbs_xi"] = _mean_se(X)
    rep["diff_t"] = _mean_se(dFt - X)
    rep["richardson_t"] = abs(float(np.mean(dFt - dFt2))) / 3
    rep["dF_dh"] = [_mean_se(dFh[:, d]) for d in range(D)]
    rep["gibbs_R"] = [_mean_se(R[:, d]) for d in range(D)]
    rep["diff_h"] = [_mean_se(dFh[:, d] - R[:, d]) for d in range(D)]
    rep["richardson_h"] = [abs(float(np.mean(dFh[:, d] - dFh2[:, d]))) / 3 for d in range(D)]

    xi = model.xi
    grad = model.mixture.gradient(R.mean(axis=0))
    res_fd = float(dFt.mean() - xi(dFh.mean(axis=0)))
    var_gibbs = float(X.mean() - xi(R.mean(axis=0)))
    # delta-method linearization: both sides share the same gradient to first order
    lin = (dFt - X) - (dFh - R) @ grad
    rep["hj_residual"] = res_fd
    rep["overlap_variance"] = var_gibbs
    rep["diff_residual"] = (res_fd - var_gibbs, _mean_se(lin)[1])
    tol = 1e-4

    def ok(pair):
        return abs(pair[0]) <= 3 * pair[1] + tol

    rep["pass_t"] = ok(rep["diff_t"])
    rep["pass_h"] = all(ok(x) for x in rep["diff_h"])
    rep["pass_residual"] = ok(rep["diff_residual"])
    rep["pass"] = rep["pass_t"] and rep["pass_h"] and rep["pass_residual"]
    return rep


# ground states ------------------------------------------------------------------

def max_energy(sample, method="auto", cap=ENUMERATION_CAP):
    """Exact maximizer of H_N over the cube: (sigma, H_N(sigma)).

    method: "exhaustive" (N <= cap), "bnb" (quadratic models, any N) or "auto".
    """
    if method == "auto":
        method = "exhaustive" if sample.N <= cap else "bnb"
    if method == "bnb":
        return _branch_and_bound(sample)
    if method != "exhaustive":
        raise ValueError(f"unknown method {method!r}")
    if sample.N > cap:
        raise ModelError(f"N={sample.N} exceeds the enumeration cap {cap}; use method='bnb'")
    best, arg = -np.inf, None
    half = sample.model.mixture.is_even and sample.N > 1
    for S in _config_chunks(sample.N, fix_last=half):
        H = sample.energies(S)
        k = int(np.argmax(H))
        if H[k] > best:
            best, arg = float(H[k]), S[k].copy()
    return arg, best


def _branch_and_bound(sample):
    const, lin, J = sample.quadratic_form()
    N = sample.N
    order = np.argsort(-(np.abs(J).sum(axis=1) + np.abs(lin)), kind="stable")
    Jo, lo = J[np.ix_(order, order)], lin[order]
    absJ = 2 * np.abs(np.triu(Jo, 1))
    # tail[k] = sum over unfixed pairs j < l with j, l >= k
    tail = np.array([absJ[k:, k:].sum() for k in range(N + 1)])

    # incumbent: single-flip local search from the field-sign start
    s = np.where(lo >= 0, 1.0, -1.0)
    improved = True
    while improved:
        gain = -2 * s * (lo + 2 * Jo @ s)
        j = int(np.argmax(gain))
        improved = gain[j] > 1e-12
        if improved:
            s[j] = -s[j]
    best_val = const + lo @ s + s @ Jo @ s
    best = s.copy()

    symmetric = not np.any(lo)
    cur = np.zeros(N)
    stack = [(0, const, lo.copy(), None)]
    while stack:
        k, val, f, choice = stack.pop()
        if choice is not None:
            cur[k - 1] = choice
        if k == N:
            if val > best_val + 1e-12:
                best_val, best = val, cur.copy()
            continue
        if val + np.abs(f[k:]).sum() + tail[k] <= best_val + 1e-12:
            continue
        signs = (1.0,) if (symmetric and k == 0) else ((-1.0, 1.0) if f[k] >= 0 else (1.0, -1.0))
        for sg in signs:
            nf = f + 2 * Jo[k] * sg
            stack.append((k + 1, val + f[k] * sg, nf, sg))
    sigma = np.empty(N)
    sigma[order] = best
    return sigma, float(hamiltonian(sample, sigma))


def welfare(sample, sigma):
    """Agreement welfare sum_{i,j} W_ij 1{sigma_i = sigma_j} of a single pair term."""
    W = _pair_couplings(sample)
    sigma = np.asarray(sigma)
    return float(np.sum(W * (sigma[:, None] == sigma[None, :])))


def _pair_couplings(sample):
    pairs = [k for k, t in enumerate(sample.terms) if len(t.slots) == 2 and t.weight > 0]
    if len(pairs) != 1 or len(sample.terms) != 1 or len(sample.blocks) != 1:
        raise ModelError("welfare form needs a pure single-species pair model")
    return sample.couplings(pairs[0])


def welfare_equivalence(sample):
    """Maximize the agreement welfare directly and compare with the H_N maximizer.

    sum W 1{s_i = s_j} = (sum W s_i s_j + sum W) / 2, so both maximizers give
    the same energy after the affine shift.
    """
    W = _pair_couplings(sample)
    N = sample.N
    _check_cap(N, ENUMERATION_CAP)
    best, arg = -np.inf, None
    for S in _config_chunks(N):
        eq = (S[:, :, None] == S[:, None, :])
        val = np.einsum("bij,ij->b", eq, W)
        k = int(np.argmax(val))
        if val[k] > best:
            best, arg = float(val[k]), S[k].copy()
    sig_h, e_h = max_energy(sample)
    c = math.sqrt(sample.terms[0].weight / N)
    predicted = c * (2 * best - W.sum())
    return {"welfare_max": best, "energy_from_welfare": predicted, "energy_max": e_h,
            "energy_of_welfare_maximizer": hamiltonian(sample, arg),
            "agree": abs(predicted - e_h) <= 1e-9 * max(1.0, abs(e_h))}


# Gibbs variational principle --------------------------------------------------------

def gibbs_variational_check(weights, g, n_perturb=100, seed=0):
    """log E_mu e^g = max_nu (E_nu g - H(nu|mu)) at nu* = mu e^g / Z; random nu stay below."""
    mu = np.asarray(weights, dtype=float)
    g = np.asarray(g, dtype=float)
    if mu.ndim != 1 or mu.shape != g.shape:
        raise ValueError("weights and g must be vectors of equal length")
    if mu.size > 2**16:
        raise ValueError("|E| must be at most 2^16")
    if np.any(mu < 0) or abs(mu.sum() - 1) > 1e-12:
        raise ValueError("weights must be a probability vector")
    supp = mu > 0
    lhs = float(logsumexp(g[supp], b=mu[supp]))

    def value(nu):
        m = nu > 0
        return float(nu[m] @ g[m] - nu[m] @ np.log(nu[m] / mu[m]))

    star = np.zeros_like(mu)
    star[supp] = np.exp(np.log(mu[supp]) + g[supp] - lhs)
    star /= star.sum()
    at_star = value(star)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    violations = 0
    for _ in range(n_perturb):
        eps = rng.uniform(0, 1)
        d = np.zeros_like(mu)
        d[supp] = rng.dirichlet(np.ones(supp.sum()))
        nu = (1 - eps) * star + eps * d
        v = value(nu)
        worst = max(worst, v)
        violations += v > lhs + 1e-10
    return {"lhs": lhs, "value_at_gibbs": at_star, "gap": abs(at_star - lhs),
            "max_perturbed": worst, "violations": int(violations), "nu_star": star}


# incremental algorithm -----------------------------------------------------------

@dataclass
class IamsResult:
    sigma: np.ndarray = field(repr=False)
    energy: float
    steps: int
    checkpoints: list
    target: float = float("nan")


def incremental_optimize(sample, martingale, steps, seed=0, n_checkpoints=10):
    """Incremental message passing driven by a Markov martingale; returns sign-rounded output.

    The state y accumulates the normalized local fields z (scaled by the clock
    rate g) and each increment of m is z times the martingale's spatial slope at
    y.  Increments are rescaled to the clock's variance step so finite-N errors
    do not compound, and the Onsager term is the one-step correction mean(u).
    """
    mix = sample.model.mixture
    pp = mix.pure_power()
    if pp is None or pp[1] != 2:
        raise ModelError("incremental optimization needs a single-species quadratic model")
    if np.max(np.abs(martingale.terminal_values())) > 1 + 1e-9:
        raise ModelError("martingale terminal values exceed 1")
    N = sample.N
    W = sample.couplings(0)
    A = (W + W.T) / math.sqrt(2 * N)
    rng = np.random.default_rng(seed)
    d = 1.0 / steps
    kap = martingale.kappa
    f_prev2 = np.zeros(N)
    f_prev = math.sqrt(d) * rng.choice([-1.0, 1.0], N)
    m = f_prev.copy()
    y = np.zeros(N)
    b = 0.0
    marks = set(np.linspace(0, steps - 1, n_checkpoints + 1).astype(int)[1:])
    checkpoints = []
    for k in range(1, steps):
        z = A @ f_prev - b * f_prev2
        t = k * d
        rate = (martingale.clock(min(t + d, 1.0)) - martingale.clock(t)) / d
        g = math.sqrt(max(rate, 0.0))
        u = martingale.slope(t, y) * g
        f = u * z
        ms = float(np.mean(f * f))
        if ms > 0:
            lam = math.sqrt(d / ms) if g > 0 else 0.0
            u *= lam
            f *= lam
        b = float(u.mean())
        y = y + g * z
        if kap:
            y = y + kap * np.tanh(kap * y) * g * g * d
        f_prev2, f_prev = f_prev, f
        m = m + f
        if not np.all(np.isfinite(m)) or np.mean(m * m) > 4:
            raise FloatingPointError(f"incremental iterate diverged at step {k}")
        if k in marks:
            checkpoints.append({"t": t + d, "mean_m2": float(np.mean(m * m)),
                                "target_s": float(martingale.second_moment(t + d)),
                                "mean_abs_m": float(np.mean(np.abs(m)))})
    sigma = np.where(m >= 0, 1.0, -1.0)
    energy = hamiltonian(sample, sigma) / N
    return IamsResult(sigma, energy, steps, checkpoints)
