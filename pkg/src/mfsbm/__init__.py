"""Moments of mean-field super-Brownian motion.

Submodules:

- ``kernels``: heat kernel, initial densities, quadrature
- ``combinatorics``: index triples labelling the moment expansion and the
  first-coalescence bijection
- ``moments``: Monte Carlo moment formula, closed second moment, Picard
  iteration for moment-dependent coefficients, moment bound
- ``particles``: branching Brownian particle ensembles
- ``dual``: coalescing dual with Gaussian test functions
- ``harness`` and ``cli``: configuration, validation, reports
"""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .combinatorics import (IndexPair, IndexTriple, bijection_forward, bijection_inverse,  # noqa: E402
                            count_triples, enumerate_index_pairs, enumerate_tau, enumerate_triples)
from .dual import GaussianFunctional, dual_moment_estimate, simulate_dual_path  # noqa: E402
from .kernels import Bump, GaussianMixture, gauss_quadrature, heat_convolve_initial, heat_kernel  # noqa: E402
from .moments import (ConstantSigma, CosineSeriesSigma, LogisticSigma, MCParams,  # noqa: E402
                      classical_second_moment, moment_formula_mc, moment_upper_bound, picard_solve, picard_step)
from .particles import EnsembleConfig, empirical_moment, run_ensemble  # noqa: E402
