"""Boundary-corrected kernel density estimates of bivariate luminosity functions."""

from .binned import BinGrid, BinnedResult, binned_lf, make_bins
from .boundary import (DensityEstimate, EstimatorConfig, Pilot, TransformError,
                       fit_pilot_and_freeze, forward_transform, marginalize_alpha,
                       tra_config)
from .cosmo import FlatLambdaCDM
from .evaluation import DlfReport, compare_report, dlf_binned, dlf_continuous
from .kde import (KernelSum, LocalBandwidths, adaptive_kde_eval, adaptive_kde_loo,
                  kde_eval, kde_loo, local_bandwidths)
from .selection import (Chain, FitResult, ObjectiveSpec, gelman_rubin, mcmc_sample,
                        minimize_S, objective_S, posterior_summary, rule_of_thumb,
                        uncertainty_band)
from .simulate import BatchSpec, Sample, draw_sample, run_batch
from .survey import (ConstantLF, DoublePowerLaw, PowerLawBoundary, SurveyWindow,
                     TabulatedBoundary, lf_model_eval)

__version__ = "0.1.0"
