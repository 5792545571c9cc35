"""Discrepancy between estimated and true LFs, and batch comparisons."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pipeline import fit_methods


def _mean_abs_log_ratio(phi, phi_hat):
    phi = np.asarray(phi, dtype=float)
    phi_hat = np.asarray(phi_hat, dtype=float)
    if phi.size == 0:
        raise ValueError("no evaluation points")
    if np.any(~(phi_hat > 0)) or np.any(~(phi > 0)):
        raise ValueError("LF values must be positive where d_LF is evaluated")
    return float(np.mean(np.abs(np.log10(phi / phi_hat))))


def dlf_continuous(truth, estimate, z, L):
    """Mean ``|log10(phi / phi_hat)|`` over the points (z, L)."""
    return _mean_abs_log_ratio(truth(z, L), estimate.phi_hat(z, L))


def dlf_binned(truth, binned):
    """Mean ``|log10(phi / phi_hat)|`` over bin centres with N > 0."""
    ok = binned.count > 0
    if not np.any(ok):
        raise ValueError("every bin is empty")
    g = binned.grid
    return _mean_abs_log_ratio(truth(g.z_c[ok], g.L_c[ok]), binned.phi[ok])


@dataclass
class DlfReport:
    estimators: tuple
    per_survey: list = field(default_factory=list)
    omitted_bins: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def means(self):
        out = {}
        for name in self.estimators:
            vals = [s[name] for s in self.per_survey if s.get(name) is not None]
            out[name] = float(np.mean(vals)) if vals else None
        return out

    def column(self, name):
        return [s.get(name) for s in self.per_survey]

    def to_dict(self):
        return {"estimators": list(self.estimators), "means": self.means,
                "per_survey": self.per_survey, "omitted_bins": self.omitted_bins,
                "failures": self.failures}


def survey_dlf(sample, estimators, truth, cosmo, options=None, scheme="arbitrary",
               eval_sample=None):
    """d_LF of each estimator on one survey; failures are recorded, not raised."""
    pts = sample if eval_sample is None else eval_sample
    row, failures, omitted = {}, [], None
    try:
        fits = fit_methods(sample, cosmo, estimators, options, scheme)
    except Exception as exc:  # a failed fit should not sink the whole batch
        return {k: None for k in estimators}, [f"fit: {exc}"], None
    for name in estimators:
        try:
            if name == "binned":
                res = fits[name].estimate
                row[name] = dlf_binned(truth, res)
                omitted = res.n_zero
            else:
                row[name] = dlf_continuous(truth, fits[name].estimate, pts.z, pts.L)
        except Exception as exc:
            row[name] = None
            failures.append(f"{name}: {exc}")
    return row, failures, omitted


def _job(args):
    return survey_dlf(*args)


def compare_report(samples, estimators, truth, cosmo, options=None, scheme="arbitrary",
                   eval_samples=None, workers=1):
    """Fit ``estimators`` on every sample and collect d_LF values."""
    estimators = tuple(estimators)
    evs = eval_samples if eval_samples is not None else [None] * len(samples)
    jobs = [(s, estimators, truth, cosmo, options, scheme, e) for s, e in zip(samples, evs)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    rep = DlfReport(estimators)
    for k, (row, failures, omitted) in enumerate(results):
        rep.per_survey.append(row)
        rep.omitted_bins.append(omitted)
        for f in failures:
            rep.failures.append({"survey": k, "error": f})
    return rep
