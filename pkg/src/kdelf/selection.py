"""Choosing bandwidth and transformation parameters.

The selection criterion is

    S = -2 sum_i ln p_{-i}(z_i, L_i) + 2 N_eff * I,

where ``p_{-i}`` is the leave-one-out density at sample point ``i`` and ``I``
the integral of ``p`` over the survey window. ``S`` is minimised with a
Nelder-Mead simplex, or explored with random-walk Metropolis on
``exp(-S/2)``. Positive parameters are handled in log space; ``beta`` is
sampled linearly.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .boundary import DELTA2_MIN, DensityEstimate, EstimatorConfig, PARAM_NAMES

_DEBUG = bool(os.environ.get("KDELF_DEBUG"))


@dataclass(frozen=True)
class Parameter:
    """A free parameter with a uniform prior box in sampling coordinates."""

    name: str
    lower: float
    upper: float
    log: bool = True

    def to_theta(self, value):
        return math.log(value) if self.log else float(value)

    def from_theta(self, theta):
        return math.exp(theta) if self.log else float(theta)

    @property
    def box(self):
        """Prior box in sampling coordinates."""
        if self.log:
            return math.log(self.lower), math.log(self.upper)
        return float(self.lower), float(self.upper)


def default_parameter(name):
    if name.startswith("h"):
        return Parameter(name, 1e-4, 10.0)
    if name == "delta1":
        return Parameter(name, math.exp(-8.0), math.exp(4.0))
    if name == "delta2":
        return Parameter(name, max(DELTA2_MIN, math.exp(-8.0)), math.exp(4.0))
    if name == "beta":
        return Parameter(name, 0.0, 1.0, log=False)
    raise ValueError(f"no default prior for {name!r}")


def default_parameters(kind, dim=2):
    return tuple(default_parameter(n) for n in PARAM_NAMES[(kind, dim)])


def s_statistic(loo_values, integral, n_eff):
    """``S`` from leave-one-out densities and the window integral."""
    loo = np.asarray(loo_values, dtype=float)
    if loo.size < 2:
        raise ValueError("S needs at least two points")
    if np.any(~(loo > 0)):
        return math.inf
    return float(-2.0 * np.sum(np.log(loo)) + 2.0 * n_eff * integral)


class ObjectiveSpec:
    """Everything needed to evaluate ``S`` at a parameter vector.

    Parameters
    ----------
    template : EstimatorConfig
        Kind, dimension, weighting and pilot; its ``params`` supply values of
        parameters that are not free.
    sample : Sample
    cosmo : cosmology
    free : sequence of Parameter, optional
        Defaults to every parameter of the kind, with the default boxes.
    factory : callable, optional
        ``factory(values) -> estimate`` replacing the kernel estimator; the
        estimate needs ``p_hat_loo()``, ``window_integral()`` and ``n_eff``.
    """

    def __init__(self, template=None, sample=None, cosmo=None, free=None,
                 alpha_range=None, factory=None):
        self.template = template
        self.sample = sample
        self.cosmo = cosmo
        self.alpha_range = alpha_range
        self.factory = factory
        if free is None:
            free = default_parameters(template.kind, template.dim)
        self.free = tuple(free)
        for p in self.free:
            if not (np.isfinite(p.lower) and np.isfinite(p.upper) and p.lower < p.upper):
                raise ValueError(f"bad bounds for {p.name}")

    @property
    def names(self):
        return tuple(p.name for p in self.free)

    def values_from_theta(self, theta):
        return {p.name: p.from_theta(t) for p, t in zip(self.free, theta)}

    def theta_from_values(self, values):
        return np.array([p.to_theta(values[p.name]) for p in self.free])

    def in_box(self, theta):
        return all(lo <= t <= hi for t, (lo, hi) in zip(theta, (p.box for p in self.free)))

    def config(self, values):
        params = dict(self.template.params) if self.template else {}
        params.update(values)
        return EstimatorConfig(self.template.kind, params, self.template.dim,
                               self.template.weighted, self.template.pilot)

    def estimate(self, values):
        if self.factory is not None:
            return self.factory(values)
        return DensityEstimate(self.config(values), self.sample, self.cosmo,
                               self.alpha_range)

    def __call__(self, theta):
        """``S`` at sampling coordinates ``theta``; +inf outside the box."""
        if not self.in_box(theta):
            return math.inf
        return objective_S(self.values_from_theta(theta), self)


class FunctionObjective:
    """Wrap a plain function ``S(values_dict)`` for the optimiser and sampler."""

    def __init__(self, func, free):
        self.func = func
        self.free = tuple(free)

    names = ObjectiveSpec.names
    values_from_theta = ObjectiveSpec.values_from_theta
    theta_from_values = ObjectiveSpec.theta_from_values
    in_box = ObjectiveSpec.in_box

    def __call__(self, theta):
        if not self.in_box(theta):
            return math.inf
        return float(self.func(self.values_from_theta(theta)))


def objective_S(params, spec):
    """``S`` at natural parameter values ``params`` (a dict)."""
    est = spec.estimate(params)
    loo = np.asarray(est.p_hat_loo(), dtype=float)
    if loo.size < 2:
        raise ValueError("S needs at least two points")
    if np.any(~(loo > 0)):
        warnings.warn(f"{int(np.sum(~(loo > 0)))} leave-one-out densities vanish; "
                      "S set to +inf", RuntimeWarning, stacklevel=2)
        return math.inf
    integral = est.window_integral()
    s = s_statistic(loo, integral, est.n_eff)
    if _DEBUG:
        n = loo.size
        lcv = float(np.mean(np.log(loo)))
        assert math.isclose(s, -2.0 * n * lcv + 2.0 * est.n_eff * integral,
                            rel_tol=1e-12)
    return s


def lcv_objective(params, spec):
    """Mean log leave-one-out density."""
    loo = np.asarray(spec.estimate(params).p_hat_loo(), dtype=float)
    if loo.size < 2:
        raise ValueError("LCV needs at least two points")
    if np.any(~(loo > 0)):
        return -math.inf
    return float(np.mean(np.log(loo)))


# -- Nelder-Mead ------------------------------------------------------------

@dataclass
class FitResult:
    params: dict
    S: float
    n_evals: int
    converged: bool
    trace: list = field(default_factory=list)
    restarts: int = 0

    def to_dict(self):
        return {"params": dict(self.params), "S": self.S, "n_evals": self.n_evals,
                "converged": self.converged, "restarts": self.restarts}


def _nelder_mead(f, x0, step, xtol, max_evals, counter, trace, best):
    d = x0.size
    simplex = [x0.copy()]
    for k in range(d):
        v = x0.copy()
        v[k] += step[k]
        simplex.append(v)
    simplex = np.array(simplex)

    def call(x):
        val = f(x)
        counter[0] += 1
        if val < best[1]:
            best[0], best[1] = x.copy(), val
        trace.append(best[1])
        return val

    fs = np.array([call(v) for v in simplex])
    if not np.any(np.isfinite(fs)):
        raise ValueError("objective is infinite on the whole initial simplex; "
                         "widen the parameter bounds or move the starting point")
    while counter[0] < max_evals:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) < xtol:
            return True
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = call(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = call(xe)
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
        else:
            xc = centroid + 0.5 * (simplex[-1] - centroid)
        fc = call(xc)
        if fc < min(fr, fs[-1]):
            simplex[-1], fs[-1] = xc, fc
            continue
        for k in range(1, d + 1):
            simplex[k] = simplex[0] + 0.5 * (simplex[k] - simplex[0])
            fs[k] = call(simplex[k])
            if counter[0] >= max_evals:
                break
    return False


def _finite_start(spec, theta0, factor=2.0, tries=12):
    """Widen the bandwidths until every leave-one-out density is positive.

    An isolated point can sit so many bandwidths from its neighbours that its
    leave-one-out density underflows, leaving ``S`` infinite at the start.
    """
    hs = [k for k, p in enumerate(spec.free) if p.name.startswith("h") and p.log]
    theta = theta0.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(tries):
            if np.isfinite(spec(theta)) or not hs:
                return theta
            for k in hs:
                theta[k] = min(theta[k] + math.log(factor), spec.free[k].box[1])
    return theta0


def minimize_S(spec, init, options=None):
    """Minimise ``S`` from ``init`` (dict of natural values).

    Options: ``xtol`` (simplex size in sampling coordinates, 1e-4),
    ``max_evals`` (2000), ``step`` (initial simplex size, 0.3),
    ``max_restarts`` (3).
    """
    opts = {"xtol": 1e-4, "max_evals": 2000, "step": 0.3, "max_restarts": 3}
    opts.update(options or {})
    theta0 = spec.theta_from_values(init)
    if not spec.in_box(theta0):
        raise ValueError("initial point lies outside the parameter bounds")
    theta0 = _finite_start(spec, theta0)
    step = np.array([opts["step"] if p.log else 0.1 * (p.upper - p.lower)
                     for p in spec.free])
    # keep the first simplex inside the box
    for k, p in enumerate(spec.free):
        lo, hi = p.box
        if theta0[k] + step[k] > hi:
            step[k] = -step[k]
    counter = [0]
    trace = []
    best = [theta0.copy(), math.inf]
    converged = _nelder_mead(spec, theta0, step, opts["xtol"], opts["max_evals"],
                             counter, trace, best)
    restarts = 0
    # restart from the best vertex until a fresh simplex stops improving
    while converged and restarts < opts["max_restarts"] and counter[0] < opts["max_evals"]:
        before = best[1]
        restarts += 1
        small = step * 0.25
        converged = _nelder_mead(spec, best[0].copy(), small, opts["xtol"],
                                 opts["max_evals"], counter, trace, best)
        if before - best[1] <= 1e-9 * max(1.0, abs(before)):
            break
    return FitResult(params=spec.values_from_theta(best[0]), S=float(best[1]),
                     n_evals=counter[0], converged=bool(converged), trace=trace,
                     restarts=restarts)


# -- Metropolis sampling ----------------------------------------------------

@dataclass
class Chain:
    """Post burn-in draws, in natural units, of every chain.

    ``draws`` has shape (chains, kept, parameters); ``loglike`` is ``-S/2``.
    """

    names: tuple
    draws: np.ndarray
    loglike: np.ndarray
    acceptance_rate: np.ndarray
    seed: int
    burn_in: int
    thinning: int = 1

    @property
    def pooled(self):
        return self.draws.reshape(-1, self.draws.shape[-1])

    def to_dict(self):
        return {"names": list(self.names), "seed": self.seed, "burn_in": self.burn_in,
                "thinning": self.thinning, "chains": int(self.draws.shape[0]),
                "kept": int(self.draws.shape[1]),
                "acceptance_rate": [float(a) for a in self.acceptance_rate]}


def _run_chain(target, theta0, scale0, n_burn, n_keep, thin, rng, adapt_every=100):
    d = theta0.size
    cov = np.diag(scale0 ** 2)
    lam = 1.0
    theta = theta0.copy()
    s = target(theta)
    if not np.isfinite(s):
        raise ValueError("chain starts where S is infinite")
    hist = []
    acc_burn = 0
    acc_win = 0
    for it in range(n_burn):
        prop = theta + lam * rng.multivariate_normal(np.zeros(d), cov, method="cholesky")
        sp = target(prop)
        if np.isfinite(sp) and math.log(rng.random()) < -0.5 * (sp - s):
            theta, s = prop, sp
            acc_burn += 1
            acc_win += 1
        else:
            rng.random()  # keep stream alignment independent of the branch
        hist.append(theta.copy())
        if (it + 1) % adapt_every == 0:
            rate = acc_win / adapt_every
            acc_win = 0
            lam *= math.exp(rate - 0.234)
            if len(hist) >= 2 * adapt_every:
                h = np.array(hist[len(hist) // 2:])
                emp = np.cov(h.T).reshape(d, d)
                if np.all(np.isfinite(emp)) and np.linalg.matrix_rank(emp) == d:
                    cov = (2.38 ** 2 / d) * emp + 1e-12 * np.eye(d)
    if n_burn > 0 and acc_burn == 0:
        raise RuntimeError("no proposal accepted during burn-in; start closer to the "
                           "optimum or narrow the initial spread")
    draws = np.empty((n_keep, d))
    ll = np.empty(n_keep)
    acc = 0
    k = 0
    total = n_keep * thin
    for it in range(total):
        prop = theta + lam * rng.multivariate_normal(np.zeros(d), cov, method="cholesky")
        sp = target(prop)
        if np.isfinite(sp) and math.log(rng.random()) < -0.5 * (sp - s):
            theta, s = prop, sp
            acc += 1
        else:
            rng.random()
        if (it + 1) % thin == 0:
            draws[k] = theta
            ll[k] = -0.5 * s
            k += 1
    return draws, ll, acc / max(total, 1)


def _chain_job(args):
    spec, theta0, scale0, n_burn, n_keep, thin, seed, c = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, c]))
    start = theta0 + scale0 * rng.standard_normal(theta0.size)
    boxes = [p.box for p in spec.free]
    start = np.array([min(max(t, lo), hi) for t, (lo, hi) in zip(start, boxes)])
    return _run_chain(spec, start, scale0, n_burn, n_keep, thin, rng)


def mcmc_sample(spec, init, settings=None):
    """Random-walk Metropolis on ``exp(-S/2)`` within the prior box.

    Settings: ``chains`` (4), ``burn_in`` (5000), ``keep`` (20000), ``thin``
    (1), ``seed`` (0), ``scale`` (initial proposal sd in sampling
    coordinates, 0.05), ``workers`` (1).
    """
    cfg = {"chains": 4, "burn_in": 5000, "keep": 20000, "thin": 1, "seed": 0,
           "scale": 0.05, "workers": 1}
    cfg.update(settings or {})
    if cfg["chains"] < 1:
        raise ValueError("need at least one chain")
    theta0 = spec.theta_from_values(init)
    if not spec.in_box(theta0):
        raise ValueError("initial point lies outside the prior box")
    scale0 = np.array([cfg["scale"] * (1.0 if p.log else (p.upper - p.lower))
                       for p in spec.free])
    jobs = [(spec, theta0, scale0, cfg["burn_in"], cfg["keep"], cfg["thin"],
             cfg["seed"], c) for c in range(cfg["chains"])]
    if cfg["workers"] > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as ex:
            out = list(ex.map(_chain_job, jobs))
    else:
        out = [_chain_job(j) for j in jobs]
    theta = np.array([o[0] for o in out])
    draws = np.empty_like(theta)
    for k, p in enumerate(spec.free):
        draws[..., k] = np.exp(theta[..., k]) if p.log else theta[..., k]
    return Chain(names=spec.names, draws=draws, loglike=np.array([o[1] for o in out]),
                 acceptance_rate=np.array([o[2] for o in out]), seed=cfg["seed"],
                 burn_in=cfg["burn_in"], thinning=cfg["thin"])


def gelman_rubin(draws):
    """Potential scale reduction factor per parameter; draws (chains, n, d)."""
    m, n = draws.shape[:2]
    means = draws.mean(axis=1)
    b = n * means.var(axis=0, ddof=1)
    w = draws.var(axis=1, ddof=1).mean(axis=0)
    var = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var / w)
    return np.where(w > 0, r, 1.0)


def posterior_summary(chain, min_draws=1000):
    """Median and central 68% interval per parameter, with R-hat."""
    pooled = chain.pooled
    if pooled.shape[0] < min_draws:
        raise ValueError(f"need at least {min_draws} post burn-in draws")
    q = np.percentile(pooled, [16.0, 50.0, 84.0], axis=0)
    out = {"parameters": {}, "rhat_available": chain.draws.shape[0] >= 2}
    rhat = gelman_rubin(chain.draws) if out["rhat_available"] else None
    for k, name in enumerate(chain.names):
        out["parameters"][name] = {
            "p16": float(q[0, k]), "median": float(q[1, k]), "p84": float(q[2, k]),
            "rhat": None if rhat is None else float(rhat[k])}
    out["max_rhat"] = None if rhat is None else float(np.max(rhat))
    out["converged"] = bool(rhat is not None and np.max(rhat) <= 1.2)
    return out


def thinned_draws(chain, max_draws=500):
    pooled = chain.pooled
    idx = np.unique(np.linspace(0, pooled.shape[0] - 1,
                                min(max_draws, pooled.shape[0])).round().astype(int))
    return pooled[idx]


def uncertainty_band(chain, spec, z, L, quantiles=(0.16, 0.84), max_draws=500):
    """Quantiles of the LF estimate over posterior draws at points (z, L).

    Returns an array of shape ``(len(quantiles),) + broadcast(z, L).shape``.
    """
    z = np.asarray(z, dtype=float)
    L = np.asarray(L, dtype=float)
    if np.broadcast(z, L).size == 0:
        raise ValueError("empty evaluation grid")
    vals = []
    for row in thinned_draws(chain, max_draws):
        est = spec.estimate(dict(zip(chain.names, row)))
        vals.append(est.phi_hat(z, L))
    return np.quantile(np.array(vals), quantiles, axis=0)


# -- starting points --------------------------------------------------------

def rule_of_thumb(sample, cosmo, kind, dim=2, delta1=0.4, delta2=0.05, pilot=None,
                  weighted=False):
    """Scott-rule starting values computed in the transformed coordinates."""
    from .boundary import forward_transform
    n = sample.n
    if kind == "tra":
        g = float(np.exp(np.mean(np.log(np.asarray(pilot.values)))))
        beta = 0.2
        return {"h10": pilot.h1 * g ** beta, "h20": pilot.h2 * g ** beta, "beta": beta}
    params = {"h1": 1.0, "h2": 1.0, "delta1": delta1}
    if dim == 3:
        params["h3"] = 1.0
    if kind == "t":
        params["delta2"] = delta2
    cfg = EstimatorConfig(kind, params, dim, weighted)
    X, _ = forward_transform(sample.z, sample.L, cfg, sample.window, cosmo, sample.alpha)
    sd = X.std(axis=0)
    iqr = np.subtract(*np.percentile(X, [75, 25], axis=0)) / 1.349
    scale = np.where(iqr > 0, np.minimum(sd, iqr), sd)
    h = scale * n ** (-1.0 / (dim + 4))
    names = ["h1", "h2"] if dim == 2 else ["h1", "h2", "h3"]
    params.update({k: float(v) for k, v in zip(names, h)})
    return params
