"""Fitting recipes shared by the command line and the comparison runs."""

from __future__ import annotations

from dataclasses import dataclass

from .binned import PAPER_Z_EDGES, binned_lf, make_bins
from .boundary import EstimatorConfig, fit_pilot_and_freeze, tra_config
from .selection import ObjectiveSpec, minimize_S, rule_of_thumb

KDE_METHODS = ("t", "tr", "tra")


@dataclass
class FitOutcome:
    method: str
    estimate: object
    result: object = None
    spec: object = None
    pilot: object = None


def objective_for(sample, cosmo, method, pilot=None, dim=None, weighted=None,
                  free=None, alpha_range=None):
    dim = sample.dim if dim is None else dim
    weighted = sample.weights is not None if weighted is None else weighted
    if method == "tra":
        template = tra_config(pilot, 1.0, 1.0, 0.0, weighted)
    else:
        template = EstimatorConfig(method, rule_of_thumb(sample, cosmo, method, dim,
                                                         weighted=weighted),
                                   dim, weighted)
    return ObjectiveSpec(template, sample, cosmo, free=free, alpha_range=alpha_range)


def fit_kde(sample, cosmo, method, pilot_fit=None, init=None, options=None,
            alpha_range=None):
    """Minimise S for one estimator; ``tra`` needs the ``tr`` outcome."""
    pilot = None
    if method == "tra":
        if pilot_fit is None:
            pilot_fit = fit_kde(sample, cosmo, "tr", options=options)
        pilot = fit_pilot_and_freeze(pilot_fit.estimate)
    spec = objective_for(sample, cosmo, method, pilot=pilot, alpha_range=alpha_range)
    if init is None:
        init = rule_of_thumb(sample, cosmo, method, sample.dim, pilot=pilot,
                             weighted=spec.template.weighted)
    result = minimize_S(spec, {k: init[k] for k in spec.names}, options)
    return FitOutcome(method, spec.estimate(result.params), result, spec, pilot)


def fit_binned(sample, cosmo, scheme="arbitrary", z_edges=PAPER_Z_EDGES, dlogL=0.3):
    grid = make_bins(sample.window, cosmo, z_edges, dlogL, scheme)
    return FitOutcome("binned", binned_lf(sample, grid, cosmo))


def fit_methods(sample, cosmo, methods, options=None, scheme="arbitrary"):
    """Fit every requested method, reusing the ``tr`` fit as the ``tra`` pilot."""
    out = {}
    for m in methods:
        if m == "binned":
            out[m] = fit_binned(sample, cosmo, scheme)
        elif m == "tra":
            if "tr" not in out:
                out["tr"] = fit_kde(sample, cosmo, "tr", options=options)
            out[m] = fit_kde(sample, cosmo, "tra", pilot_fit=out["tr"], options=options)
        elif m in KDE_METHODS:
            if m not in out:
                out[m] = fit_kde(sample, cosmo, m, options=options)
        else:
            raise ValueError(f"unknown method {m!r}")
    return {m: out[m] for m in methods}
