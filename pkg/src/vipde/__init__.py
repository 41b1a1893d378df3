"""Variational Bayesian inference for PDE-constrained inverse problems.

Wavelet sieve priors, mean-field Gaussian variational posteriors and the
forward solvers they are fitted against (Darcy flow, time-fractional
subdiffusion, a periodic smoothing map), with an experiment harness.
"""

from .basis import BOUNDARY, INTERIOR, BasisSet, CoefField, analyze, build_basis, synthesize
from .forward import DarcyProblem, LinearProblem, SmoothingProblem, SubdiffusionProblem, forward_eval, misfit_gradient
from .links import LinkSpec, link_apply, link_derivative, link_invert
from .mlf import mittag_leffler, ml_one, ml_two
from .model import Dataset, hellinger_sq, kl_exact, loglik, renyi2_exact, simulate_data
from .prior import PriorSpec, prior_coord_params, rkhs_norm, sample_illposed, sample_sieve, truncation_level
from .select import SelectionProblem, select_and_fit
from .vi import FitConfig, MeanFieldGaussian, elbo, fit_vi, kl_meanfield, posterior_functionals, r_bound

__version__ = "0.1.0"
