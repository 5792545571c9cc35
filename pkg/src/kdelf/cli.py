"""Command-line workbench: simulate, fit, mcmc, compare.

Every command reads a YAML run configuration; command-line flags override
its values. Progress goes to stderr, results only to files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import os
import sys
import time
from dataclasses import dataclass, field

import click
import numpy as np
import yaml

from . import io
from .binned import PAPER_Z_EDGES, SCHEMES
from .boundary import TransformError
from .cosmo import FlatLambdaCDM
from .evaluation import compare_report
from .pipeline import fit_binned, fit_kde, fit_methods, objective_for
from .selection import mcmc_sample, posterior_summary, uncertainty_band
from .simulate import BatchSpec, EnvelopeError, draw_sample, run_batch
from .survey import BoundaryError, SurveyWindow, lf_from_dict

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

DEFAULT_CONFIG = {
    "seed": 1,
    "cosmology": {"omega_m": 0.27, "omega_lambda": 0.73, "h0": 71.0},
    "window": {"z_min": 0.0, "z_max": 6.0, "L_min": 22.0, "L_max": 30.0,
               "omega": 0.456, "flux_limit": 0.04,
               "boundary": {"kind": "power_law", "alpha": 0.75},
               "axis_kind": "luminosity"},
    "truth": {"kind": "double_power_law", "log_phi_star": [-5.321, 1.1, -0.22],
              "L_star": [24.7, 1.0, -0.12], "faint_slope": 0.5, "bright_slope": 2.3},
    "simulate": {"n": 19000, "exact_n": False, "adjust_omega": True, "alpha": None},
    "batch": {"count": 200, "flux_limit_range": [-2.5, -0.5],
              "size_range": [2000, 40000]},
    "fit": {"grid": "z=0:6:61,logL=22:30:81", "scheme": "flim-anchored",
            "dlogL": 0.3, "z_edges": list(PAPER_Z_EDGES), "xtol": 1e-4,
            "max_evals": 2000},
    "mcmc": {"chains": 4, "burn_in": 5000, "keep": 20000, "band": False,
             "band_draws": 500},
    "compare": {"estimators": ["binned", "t", "tr", "tra"], "scheme": "arbitrary",
                "eval_points": "sample"},
}


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


class NumericalError(click.ClickException):
    exit_code = EXIT_NUMERIC


def _merge(base, over):
    out = dict(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    raw: dict
    cosmo: object
    window: SurveyWindow
    truth: object
    seed: int
    base_dir: str = "."
    problems: list = field(default_factory=list)

    def section(self, name):
        return self.raw.get(name, {}) or {}


def load_config(path=None, overrides=None):
    """Read and validate a run configuration; raises ConfigError."""
    raw = DEFAULT_CONFIG
    base_dir = "."
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a mapping")
        raw = _merge(raw, user)
        base_dir = os.path.dirname(os.path.abspath(path))
    raw = _merge(raw, overrides)
    problems = []
    try:
        cosmo = FlatLambdaCDM(**raw["cosmology"])
    except (TypeError, ValueError) as exc:
        problems.append(f"cosmology: {exc}")
        cosmo = None
    wcfg = dict(raw["window"])
    bnd = dict(wcfg.get("boundary") or {})
    if "file" in bnd and not os.path.isabs(bnd["file"]):
        bnd["file"] = os.path.join(base_dir, bnd["file"])
        wcfg["boundary"] = bnd
    if "file" in bnd and not os.path.exists(bnd["file"]):
        problems.append(f"window.boundary.file: {bnd['file']} does not exist")
        window = None
    else:
        try:
            window = SurveyWindow.from_dict(wcfg)
        except (TypeError, ValueError) as exc:
            problems.append(f"window: {exc}")
            window = None
    try:
        truth = lf_from_dict(raw["truth"]) if raw.get("truth") else None
    except (TypeError, ValueError) as exc:
        problems.append(f"truth: {exc}")
        truth = None
    seed = raw.get("seed")
    if not isinstance(seed, int) or seed < 0:
        problems.append("seed: must be a non-negative integer")
    fit = raw.get("fit", {})
    if fit.get("scheme") not in SCHEMES:
        problems.append(f"fit.scheme: must be one of {', '.join(SCHEMES)}")
    try:
        parse_grid(fit.get("grid", ""))
    except ValueError as exc:
        problems.append(f"fit.grid: {exc}")
    mc = raw.get("mcmc", {})
    for k in ("chains", "burn_in", "keep"):
        if not isinstance(mc.get(k), int) or mc[k] < (1 if k == "chains" else 0):
            problems.append(f"mcmc.{k}: must be a positive integer")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return RunConfig(raw=raw, cosmo=cosmo, window=window, truth=truth, seed=seed,
                     base_dir=base_dir)


def parse_grid(text):
    """``z=a:b:n,logL=c:d:m`` to two 1-d arrays."""
    axes = {}
    for part in text.split(","):
        if "=" not in part:
            raise ValueError(f"bad grid component {part!r}")
        name, rng = part.split("=", 1)
        bits = rng.split(":")
        if len(bits) != 3:
            raise ValueError(f"grid axis {name!r} needs start:stop:count")
        a, b, n = float(bits[0]), float(bits[1]), int(bits[2])
        if n < 1 or not b >= a:
            raise ValueError(f"grid axis {name!r} is empty")
        axes[name.strip()] = np.linspace(a, b, n)
    if set(axes) != {"z", "logL"}:
        raise ValueError("grid needs exactly the axes z and logL")
    return axes["z"], axes["logL"]


def _log(msg):
    click.echo(msg, err=True)


def _set_threads(threads):
    if threads:
        import numba
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def _numeric_guard(func):
    def wrapper(*a, **kw):
        try:
            return func(*a, **kw)
        except (FloatingPointError, EnvelopeError, TransformError, BoundaryError,
                ZeroDivisionError) as exc:
            raise NumericalError(str(exc)) from exc
    wrapper.__name__ = func.__name__
    wrapper.__doc__ = func.__doc__
    return wrapper


@click.group()
@click.version_option(package_name="kdelf")
def main():
    """Kernel density estimation of luminosity functions."""


# -- simulate -----------------------------------------------------------------

def _survey_entry(fname, s):
    return {"file": fname, "n": s.n, "omega": s.window.omega,
            "flux_limit": s.window.flux_limit, "seed": s.seed,
            "expected_n": s.meta.get("expected_n"),
            "log_flux_limit": s.meta.get("log_flux_limit"),
            "target_n": s.meta.get("target_n")}


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--n", "target_n", type=float, default=None, help="Expected sample size.")
@click.option("--batch", type=int, default=None, help="Simulate a batch of this many surveys.")
@click.option("--exact-n", is_flag=True, default=None, help="Fix the sample size exactly.")
@click.option("--threads", type=int, default=1)
@_numeric_guard
def simulate(config_path, out_dir, seed, target_n, batch, exact_n, threads):
    """Draw mock flux-limited samples from the truth LF."""
    over = {}
    if seed is not None:
        over["seed"] = seed
    sim = {}
    if target_n is not None:
        sim["n"] = target_n
    if exact_n:
        sim["exact_n"] = True
    if sim:
        over["simulate"] = sim
    if batch is not None:
        over["batch"] = {"count": batch}
    cfg = load_config(config_path, over)
    if cfg.truth is None:
        raise ConfigError("simulate needs a truth LF")
    _set_threads(threads)
    sc = cfg.section("simulate")
    t0 = time.time()
    manifest = {"command": "simulate", "seed": cfg.seed, "cosmology": cfg.cosmo.to_dict(),
                "window": cfg.window.to_dict(), "truth": cfg.truth.to_dict(),
                "csv_schema_version": io.SCHEMA_VERSION, "surveys": []}
    if batch is not None:
        bc = cfg.section("batch")
        spec = BatchSpec(count=int(bc["count"]), flux_limit_range=tuple(bc["flux_limit_range"]),
                         size_range=tuple(bc["size_range"]), truth=cfg.truth, seed=cfg.seed,
                         window=cfg.window)
        samples = run_batch(spec, cfg.cosmo, exact_n=bool(sc.get("exact_n")),
                            workers=threads)
        manifest["batch"] = spec.to_dict()
        files = [f"sample_{k:03d}.csv" for k in range(len(samples))]
    else:
        alpha = sc.get("alpha")
        samples = [draw_sample(cfg.truth, cfg.window, cfg.cosmo, float(sc["n"]), cfg.seed,
                               exact_n=bool(sc.get("exact_n")),
                               adjust_omega=bool(sc.get("adjust_omega", True)),
                               alpha_spec=None if alpha is None else tuple(alpha))]
        files = ["sample.csv"]
    os.makedirs(out_dir, exist_ok=True)
    for fname, s in zip(files, samples):
        io.write_sample(os.path.join(out_dir, fname), s)
        manifest["surveys"].append(_survey_entry(fname, s))
    io.write_json(os.path.join(out_dir, "manifest.json"), manifest)
    _log(f"simulate: {len(samples)} sample(s) in {time.time() - t0:.1f}s -> {out_dir}")


# -- fit ------------------------------------------------------------------------

def _load_sample(path, cfg):
    """Read a sample, taking its window from a neighbouring manifest if any."""
    if not os.path.exists(path):
        raise ConfigError(f"sample file {path} does not exist")
    window = cfg.window
    man = os.path.join(os.path.dirname(os.path.abspath(path)), "manifest.json")
    if os.path.exists(man):
        doc = io.read_json(man)
        name = os.path.basename(path)
        for entry in doc.get("surveys", []):
            if entry.get("file") == name:
                base = SurveyWindow.from_dict(doc["window"])
                window = base.with_omega(entry["omega"]).with_flux_limit(entry["flux_limit"])
    try:
        return io.read_sample(path, window)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _grid_rows(estimate, zg, Lg, band=None):
    Z, L = np.meshgrid(zg, Lg, indexing="ij")
    z, L = Z.ravel(), L.ravel()
    phi = np.full(z.shape, np.nan)
    ok = z > 0
    phi[ok] = estimate.phi_hat(z[ok], L[ok])
    lo = np.full(z.shape, np.nan)
    hi = np.full(z.shape, np.nan)
    if band is not None:
        lo[ok], hi[ok] = band
    ext = estimate.extrapolated(z, L)
    return zip(z, L, phi, lo, hi, ext)


GRID_HEADER = ["z", "logL", "phi", "phi_lo", "phi_hi", "extrapolated"]
BIN_HEADER = ["z_lo", "z_hi", "logL_lo", "logL_hi", "z_c", "logL_c", "N", "phi",
              "phi_err", "flag"]


def _options(cfg):
    f = cfg.section("fit")
    return {"xtol": float(f.get("xtol", 1e-4)), "max_evals": int(f.get("max_evals", 2000))}


def _rebuild_tr(out_dir, sample, cfg):
    """Estimate from a previous tr fit in ``out_dir``, or None."""
    path = os.path.join(out_dir, "fit_tr.json")
    if not os.path.exists(path):
        return None
    doc = io.read_json(path)
    if doc.get("sample") != os.path.basename(sample.meta.get("path", "")):
        return None
    spec = objective_for(sample, cfg.cosmo, "tr")
    from .pipeline import FitOutcome
    return FitOutcome("tr", spec.estimate(doc["params"]), None, spec)


def _write_fit(out_dir, method, outcome, sample, cfg, zg, Lg):
    res = outcome.result
    doc = {"command": "fit", "method": method, "sample": sample.meta.get("path"),
           "n": sample.n, "n_eff": sample.n_eff, "params": res.params, "S": res.S,
           "n_evals": res.n_evals, "converged": res.converged, "restarts": res.restarts,
           "window_integral": outcome.estimate.window_integral(),
           "config": outcome.estimate.config.to_dict()}
    io.write_json(os.path.join(out_dir, f"fit_{method}.json"), doc)
    io.write_csv(os.path.join(out_dir, f"phi_{method}.csv"), GRID_HEADER,
                 _grid_rows(outcome.estimate, zg, Lg))


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--sample", "sample_path", required=True, type=click.Path())
@click.option("--method", type=click.Choice(["t", "tr", "tra", "binned"]), required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--scheme", type=click.Choice(SCHEMES), default=None)
@click.option("--grid", "grid", default=None, help="e.g. z=0:6:61,logL=22:30:81")
@click.option("--threads", type=int, default=1)
@_numeric_guard
def fit(config_path, sample_path, method, out_dir, scheme, grid, threads):
    """Fit one estimator to a sample and export its LF on a grid."""
    over = {"fit": {}}
    if scheme:
        over["fit"]["scheme"] = scheme
    if grid:
        over["fit"]["grid"] = grid
    cfg = load_config(config_path, over)
    sample = _load_sample(sample_path, cfg)
    zg, Lg = parse_grid(cfg.section("fit")["grid"])
    _set_threads(threads)
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    fc = cfg.section("fit")
    if method == "binned":
        res = fit_binned(sample, cfg.cosmo, fc["scheme"], tuple(fc["z_edges"]),
                         float(fc["dlogL"])).estimate
        io.write_csv(os.path.join(out_dir, f"binned_{fc['scheme']}.csv"), BIN_HEADER,
                     res.rows())
        _log(f"fit binned: {res.grid.size} bins, {res.n_zero} empty")
        return
    opts = _options(cfg)
    pilot_fit = None
    if method == "tra":
        pilot_fit = _rebuild_tr(out_dir, sample, cfg)
        if pilot_fit is None:
            _log("fit tra: no tr result in the output directory, fitting tr first")
            pilot_fit = fit_kde(sample, cfg.cosmo, "tr", options=opts)
            _check_converged(out_dir, "tr", pilot_fit)
            _write_fit(out_dir, "tr", pilot_fit, sample, cfg, zg, Lg)
    outcome = fit_kde(sample, cfg.cosmo, method, pilot_fit=pilot_fit, options=opts)
    _check_converged(out_dir, method, outcome)
    _write_fit(out_dir, method, outcome, sample, cfg, zg, Lg)
    _log(f"fit {method}: S={outcome.result.S:.6g} after {outcome.result.n_evals} "
         f"evaluations in {time.time() - t0:.1f}s")


def _check_converged(out_dir, method, outcome):
    res = outcome.result
    if not res.converged:
        io.write_csv(os.path.join(out_dir, f"trace_{method}.csv"), ["evaluation", "best_S"],
                     enumerate(res.trace))
        raise NumericalError(f"{method}: optimiser did not converge in {res.n_evals} "
                             f"evaluations; trace written")


# -- mcmc -----------------------------------------------------------------------

@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--sample", "sample_path", required=True, type=click.Path())
@click.option("--method", type=click.Choice(["t", "tr", "tra"]), required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--chains", type=int, default=None)
@click.option("--burn-in", type=int, default=None)
@click.option("--keep", type=int, default=None)
@click.option("--band/--no-band", default=None, help="Export a 68% LF band on the grid.")
@click.option("--grid", "grid", default=None)
@click.option("--threads", type=int, default=1)
@_numeric_guard
def mcmc(config_path, sample_path, method, out_dir, chains, burn_in, keep, band, grid,
         threads):
    """Sample estimator parameters by Metropolis MCMC."""
    over = {"mcmc": {}, "fit": {}}
    for k, v in (("chains", chains), ("burn_in", burn_in), ("keep", keep), ("band", band)):
        if v is not None:
            over["mcmc"][k] = v
    if grid:
        over["fit"]["grid"] = grid
    cfg = load_config(config_path, over)
    sample = _load_sample(sample_path, cfg)
    zg, Lg = parse_grid(cfg.section("fit")["grid"])
    _set_threads(threads)
    os.makedirs(out_dir, exist_ok=True)
    mc = cfg.section("mcmc")
    opts = _options(cfg)
    pilot_fit = None
    if method == "tra":
        pilot_fit = _rebuild_tr(out_dir, sample, cfg) or fit_kde(sample, cfg.cosmo, "tr",
                                                                options=opts)
    start = fit_kde(sample, cfg.cosmo, method, pilot_fit=pilot_fit, options=opts)
    chain = mcmc_sample(start.spec, start.result.params,
                        {"chains": mc["chains"], "burn_in": mc["burn_in"],
                         "keep": mc["keep"], "seed": cfg.seed, "workers": threads})
    for c in range(chain.draws.shape[0]):
        io.write_csv(os.path.join(out_dir, f"chain_{method}_{c}.csv"),
                     list(chain.names) + ["loglike"],
                     (list(row) + [ll] for row, ll in zip(chain.draws[c], chain.loglike[c])))
    summary = posterior_summary(chain, min_draws=1)
    summary.update({"command": "mcmc", "method": method, "chain": chain.to_dict(),
                    "optimum": start.result.params})
    if summary["max_rhat"] is not None and summary["max_rhat"] > 1.2:
        summary["warning"] = "NOT CONVERGED: R-hat exceeds 1.2"
        _log(f"WARNING: chains have not converged (max R-hat {summary['max_rhat']:.3f})")
    io.write_json(os.path.join(out_dir, f"summary_{method}.json"), summary)
    if mc.get("band"):
        Z, L = np.meshgrid(zg, Lg, indexing="ij")
        ok = Z.ravel() > 0
        q = uncertainty_band(chain, start.spec, Z.ravel()[ok], L.ravel()[ok],
                             max_draws=int(mc.get("band_draws", 500)))
        io.write_csv(os.path.join(out_dir, f"band_{method}.csv"), GRID_HEADER,
                     _grid_rows(start.estimate, zg, Lg, band=(q[0], q[1])))


# -- compare --------------------------------------------------------------------

@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--batch", "batch_dir", required=True, type=click.Path())
@click.option("--estimators", default=None, help="Comma-separated, e.g. binned,t,tr,tra")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--threads", type=int, default=1)
@_numeric_guard
def compare(config_path, batch_dir, estimators, out_dir, threads):
    """d_LF of several estimators over a simulated batch."""
    over = {}
    if estimators:
        over["compare"] = {"estimators": [e.strip() for e in estimators.split(",")]}
    cfg = load_config(config_path, over)
    man_path = os.path.join(batch_dir, "manifest.json")
    if not os.path.exists(man_path):
        raise ConfigError(f"{batch_dir} has no manifest.json")
    man = io.read_json(man_path)
    if not man.get("truth"):
        raise ConfigError("the batch manifest records no truth LF; d_LF needs it")
    est = cfg.section("compare")["estimators"]
    bad = [e for e in est if e not in ("binned", "t", "tr", "tra")]
    if bad:
        raise ConfigError(f"unknown estimators: {', '.join(bad)}")
    truth = lf_from_dict(man["truth"])
    cosmo = FlatLambdaCDM(**man["cosmology"])
    base = SurveyWindow.from_dict(man["window"])
    samples = []
    for entry in man["surveys"]:
        w = base.with_omega(entry["omega"]).with_flux_limit(entry["flux_limit"])
        samples.append(io.read_sample(os.path.join(batch_dir, entry["file"]), w))
    cc = cfg.section("compare")
    if cc.get("eval_points", "sample") not in ("sample", "fresh"):
        raise ConfigError("compare.eval_points must be 'sample' or 'fresh'")
    evals = None
    if cc.get("eval_points") == "fresh":
        # independent draws from the truth, decoupled from the fitted points
        evals = [draw_sample(truth, s.window, cosmo, s.n, [cfg.seed, k, 2], exact_n=True,
                             adjust_omega=False) for k, s in enumerate(samples)]
    _set_threads(1)
    t0 = time.time()
    rep = compare_report(samples, est, truth, cosmo, options=_options(cfg),
                         scheme=cc.get("scheme", "arbitrary"), eval_samples=evals,
                         workers=threads)
    os.makedirs(out_dir, exist_ok=True)
    doc = rep.to_dict()
    doc.update({"command": "compare", "eval_points": cc.get("eval_points", "sample"),
                "batch": os.path.basename(os.path.normpath(batch_dir)),
                "surveys": [e["file"] for e in man["surveys"]]})
    io.write_json(os.path.join(out_dir, "dlf_report.json"), doc)
    io.write_csv(os.path.join(out_dir, "dlf_distribution.csv"), ["survey"] + list(est),
                 ([e["file"]] + [np.nan if r[k] is None else r[k] for k in est]
                  for e, r in zip(man["surveys"], rep.per_survey)))
    _log(f"compare: {len(samples)} surveys in {time.time() - t0:.1f}s; means {rep.means}")


@main.command("default-config")
def default_config():
    """Print the default run configuration as YAML."""
    click.echo(yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False))


if __name__ == "__main__":
    sys.exit(main())
