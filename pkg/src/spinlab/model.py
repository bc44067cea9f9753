"""Gaussian spin-glass models: covariance mixtures, disorder and energies.

Overlaps are always normalized by the total spin count N, so for a model with
species blocks of sizes N_d the overlap vector of two configurations is
R_d = sigma_d . tau_d / N.  With this convention E[H(s)H(t)] = N xi(R(s, t))
holds exactly, and full self-alignment gives R_d = N_d / N (about lambda_d).
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ModelError(ValueError):
    """Invalid model definition or incompatible sample."""


@dataclass(frozen=True)
class MixtureFunction:
    """Covariance polynomial xi(x) = sum_p c_p prod_d x_d^{p_d} with c_p >= 0."""

    species_count: int
    terms: tuple

    def __post_init__(self):
        if self.species_count < 1:
            raise ModelError("species_count must be positive")
        clean = []
        for exps, weight in self.terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.species_count:
                raise ModelError(f"exponent {exps} does not have {self.species_count} entries")
            if any(e < 0 for e in exps):
                raise ModelError(f"negative exponent in {exps}")
            if not weight >= 0:
                raise ModelError(f"weight {weight} must be nonnegative")
            clean.append((exps, float(weight)))
        object.__setattr__(self, "terms", tuple(clean))

    @property
    def degree(self):
        return max((sum(p) for p, _ in self.terms), default=0)

    @property
    def is_even(self):
        """True when xi(-x) = xi(x) termwise, i.e. H is invariant under a global flip."""
        return all(sum(p) % 2 == 0 for p, c in self.terms if c > 0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.species_count,):
            if self.species_count == 1 and (x.ndim == 0 or x.shape[-1] != 1):
                x = x[..., None]
            else:
                raise ModelError(f"expected {self.species_count} overlaps, got shape {x.shape}")
        out = np.zeros(x.shape[:-1])
        for p, c in self.terms:
            out = out + c * np.prod(x ** np.array(p), axis=-1)
        return out if out.ndim else float(out)

    def gradient(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        g = np.zeros(x.shape)
        for p, c in self.terms:
            for d, pd in enumerate(p):
                if pd == 0:
                    continue
                q = np.array(p)
                q[d] -= 1
                g[..., d] += c * pd * np.prod(x ** q, axis=-1)
        return g

    def derivative(self, r, order=1):
        """Derivative of a single-species mixture in r."""
        if self.species_count != 1:
            raise ModelError("derivative() is defined for one species only")
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for (p,), c in self.terms:
            if p >= order:
                out = out + c * math.perm(p, order) * r ** (p - order)
        return out if out.ndim else float(out)

    def pure_power(self):
        """(c, p) if xi(r) = c r^p for one species, else None."""
        live = [(p, c) for p, c in self.terms if c > 0]
        if self.species_count == 1 and len(live) == 1:
            return live[0][1], live[0][0][0]
        return None

    def to_dict(self):
        return {"species": self.species_count,
                "mixture": [[list(p), c] for p, c in self.terms]}


@dataclass(frozen=True)
class ModelSpec:
    """A mixture together with species fractions lambda_d summing to one."""

    mixture: MixtureFunction
    fractions: tuple = (1.0,)
    name: str = "model"

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != self.mixture.species_count:
            raise ModelError("one fraction per species is required")
        if any(not f > 0 for f in fr):
            raise ModelError("species fractions must be positive")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ModelError(f"species fractions must sum to 1, got {sum(fr)}")
        object.__setattr__(self, "fractions", fr)

    @property
    def species_count(self):
        return self.mixture.species_count

    def xi(self, overlaps):
        return self.mixture(overlaps)

    def block_sizes(self, N):
        """Largest-remainder rounding of lambda_d N; ties go to the lower species index."""
        raw = np.array(self.fractions) * N
        sizes = np.floor(raw).astype(int)
        rem = raw - sizes
        order = sorted(range(len(rem)), key=lambda d: (-round(rem[d], 12), d))
        for d in order[: N - sizes.sum()]:
            sizes[d] += 1
        return tuple(int(s) for s in sizes)

    def self_overlap(self, N=None):
        """Overlap of a configuration with itself: N_d / N, or lambda_d when N is None."""
        if N is None:
            return np.array(self.fractions)
        return np.array(self.block_sizes(N)) / N

    def to_dict(self):
        d = self.mixture.to_dict()
        d.update({"lambda": list(self.fractions), "name": self.name})
        return d


def covariance(model, overlaps):
    """xi evaluated at a vector of per-species overlaps (normalized by total N)."""
    x = np.atleast_1d(np.asarray(overlaps, dtype=float))
    if x.shape != (model.species_count,):
        raise ModelError(f"model has {model.species_count} species, got {x.size} overlaps")
    if np.any(np.abs(x) > 1 + 1e-12):
        raise ModelError("overlaps must lie in [-1, 1]")
    return float(model.xi(x))


def sk_model():
    return ModelSpec(MixtureFunction(1, (((2,), 1.0),)), (1.0,), "sk")


def pure_model(p, weight=1.0):
    return ModelSpec(MixtureFunction(1, (((p,), weight),)), (1.0,), f"pure{p}")


def mixed_model(weights):
    """Single-species mixture from a mapping {p: c_p}."""
    terms = tuple(((int(p),), float(c)) for p, c in sorted(weights.items()))
    return ModelSpec(MixtureFunction(1, terms), (1.0,), "mixed")


def bipartite_model(l1=0.5, l2=0.5):
    return ModelSpec(MixtureFunction(2, (((1, 1), 1.0),)), (l1, l2), "bipartite")


def model_from_dict(d):
    try:
        species = int(d.get("species", 1))
        mixture = MixtureFunction(species, tuple((tuple(np.atleast_1d(p)), c) for p, c in d["mixture"]))
        lam = d.get("lambda", [1.0] * species if species == 1 else None)
        if lam is None:
            raise ModelError("multi-species models need a 'lambda' entry")
        return ModelSpec(mixture, tuple(np.atleast_1d(lam)), str(d.get("name", "model")))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model definition: {exc}") from exc


def load_model(path):
    """Read a model file (TOML, or JSON by suffix)."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ModelError(f"cannot parse {path}: {exc}") from exc
    return model_from_dict(data)


# disorder -------------------------------------------------------------------

_FIELD_KEY = 1_000_003
DENSE_MAX_DEGREE = 3


def _generator(seed, key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def sample_seed(seed, index):
    """Seed of the index-th disorder sample in a quenched average."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class _Term:
    exponents: tuple
    weight: float
    slots: tuple  # species index of each tensor axis
    shape: tuple
    dense: object  # ndarray or None when streamed


@dataclass(frozen=True, eq=False)
class DisorderSample:
    """One realization of the Gaussian couplings of `model` at size N.

    Coupling slices are drawn per (term, first index) from a counter-based
    Philox stream, so the dense and streamed evaluations see identical numbers.
    """

    model: ModelSpec
    N: int
    seed: int
    blocks: tuple
    terms: tuple = field(repr=False)
    z: np.ndarray = field(repr=False)

    @property
    def offsets(self):
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.blocks)]))

    def block(self, d):
        o = self.offsets
        return slice(o[d], o[d + 1])

    def coupling_slice(self, k, i):
        """Slice W[i, ...] of term k (regenerated from the counter stream)."""
        term = self.terms[k]
        if term.dense is not None:
            return term.dense[i]
        return _generator(self.seed, (k, i)).standard_normal(term.shape[1:])

    def couplings(self, k):
        """Full tensor of term k (materialized even when the term is streamed)."""
        term = self.terms[k]
        if term.dense is not None:
            return term.dense
        return np.stack([self.coupling_slice(k, i) for i in range(term.shape[0])])

    def species_fields(self, S):
        """Per-species products z_d . sigma_d for a batch S of configurations."""
        S = np.atleast_2d(S)
        return np.stack([S[:, self.block(d)] @ self.z[self.block(d)]
                         for d in range(len(self.blocks))], axis=1)

    def energies(self, S):
        """H_N for each row of the (B, N) array S of +-1 spins."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape[1] != self.N:
            raise ModelError(f"configurations have {S.shape[1]} spins, sample has {self.N}")
        out = np.zeros(S.shape[0])
        for k, term in enumerate(self.terms):
            if term.weight == 0:
                continue
            P = len(term.slots)
            scale = math.sqrt(term.weight) * self.N ** (-(P - 1) / 2)
            if P == 0:
                out += scale * _generator(self.seed, (k, 0)).standard_normal()
                continue
            parts = [S[:, self.block(d)] for d in term.slots]
            if term.dense is not None:
                val = _contract(term.dense, parts)
            else:
                val = np.zeros(S.shape[0])
                for i in range(term.shape[0]):
                    w = self.coupling_slice(k, i)
                    val += parts[0][:, i] * _contract_rest(w, parts[1:])
            out += scale * val
        return out

    def quadratic_form(self):
        """(const, lin, J) with H(s) = const + lin.s + s.J.s, J symmetric, zero diagonal.

        Only available when every term has total degree at most two.
        """
        if self.model.mixture.degree > 2:
            raise ModelError("quadratic form needs total degree <= 2")
        N = self.N
        const, lin, J = 0.0, np.zeros(N), np.zeros((N, N))
        for k, term in enumerate(self.terms):
            P = len(term.slots)
            scale = math.sqrt(term.weight) * N ** (-(P - 1) / 2)
            if P == 0:
                const += scale * _generator(self.seed, (k, 0)).standard_normal()
            elif P == 1:
                lin[self.block(term.slots[0])] += scale * self.couplings(k)
            else:
                M = np.zeros((N, N))
                M[self.block(term.slots[0]), self.block(term.slots[1])] = scale * self.couplings(k)
                J += (M + M.T) / 2
        const += float(np.trace(J))
        np.fill_diagonal(J, 0.0)
        return const, lin, J


def _contract_rest(w, parts):
    if not parts:
        return float(w)
    return _contract(w, parts)


def _contract(W, parts):
    """Contract a coupling tensor with one batch spin block per axis."""
    A = parts[0] @ W.reshape(W.shape[0], -1)
    rest = W.shape[1:]
    for p in parts[1:]:
        A = np.einsum("bjr,bj->br", A.reshape(A.shape[0], rest[0], -1), p)
        rest = rest[1:]
    return A[:, 0]


def sample_disorder(model, N, seed, dense_max_degree=DENSE_MAX_DEGREE):
    """Draw the couplings of `model` at size N from `seed` (deterministic)."""
    N = int(N)
    if N < 1:
        raise ModelError("N must be at least 1")
    if not 0 <= int(seed) < 2**64:
        raise ModelError("seed must be a 64-bit unsigned integer")
    seed = int(seed)
    blocks = model.block_sizes(N)
    if min(blocks) < 1:
        raise ModelError(f"N={N} leaves a species empty (block sizes {blocks})")
    terms = []
    for k, (exps, weight) in enumerate(model.mixture.terms):
        slots = tuple(d for d, p in enumerate(exps) for _ in range(p))
        shape = tuple(blocks[d] for d in slots)
        dense = None
        if 0 < len(slots) <= dense_max_degree:
            dense = np.stack([_generator(seed, (k, i)).standard_normal(shape[1:])
                              for i in range(shape[0])])
            dense.setflags(write=False)
        terms.append(_Term(exps, weight, slots, shape, dense))
    z = _generator(seed, (_FIELD_KEY,)).standard_normal(N)
    z.setflags(write=False)
    return DisorderSample(model, N, seed, blocks, tuple(terms), z)


def hamiltonian(sample, sigma):
    """H_N(sigma) in extensive units."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (sample.N,):
        raise ModelError(f"configuration has shape {sigma.shape}, expected ({sample.N},)")
    return float(sample.energies(sigma[None, :])[0])


def overlaps(sample, s, t):
    """Per-species overlap vector sigma_d . tau_d / N."""
    s, t = np.asarray(s, float), np.asarray(t, float)
    return np.array([s[sample.block(d)] @ t[sample.block(d)] for d in range(len(sample.blocks))]) / sample.N
