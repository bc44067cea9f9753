"""Numerical laboratory for mean-field spin-glass free energies."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

from .model import (DisorderSample, MixtureFunction, ModelError, ModelSpec, bipartite_model, covariance,
                    hamiltonian, load_model, mixed_model, pure_model, sample_disorder, sk_model)
from .parisi import DiscreteMeasure, ParisiSolution, optimize_parisi, parisi_functional, solve_parisi_pde
from .uninverted import (MarkovMartingale, UninvertedValue, alg_threshold, evaluate_uninverted,
                         martingale_from_measure, optimize_uninverted, phi_star)
from .hj import (HJField, StepPath, hopf_lax, path_measure_map, psi1_path, psi1_scalar,
                 solve_hj_bipartite, solve_hj_scalar, xi_star)
from .mclab import (Convention, FreeEnergyEstimate, GibbsObservable, derivative_identity_check,
                    enriched_free_energy, exact_log_partition, gibbs_expectation, gibbs_variational_check,
                    incremental_optimize, max_energy, quenched_free_energy)
