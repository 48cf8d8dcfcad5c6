"""Command-line surface: simulate, fit, replicate-study, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure during sampling.
"""

import datetime
import json
import pathlib
import sys
from dataclasses import replace

import click
import numpy as np

from . import __version__, io
from .analysis import build_report
from .data import PanelDataset
from .mcmc import ChainConfig, run_chain
from .simulate import (add_noise_covariates, generate_dataset,
                       zinb_default_spec, poisson_default_spec, scale_effects)
from .study import default_threads, parse_study_config, run_study

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@click.group()
@click.version_option(__version__)
def main():
    """Bayesian non-homogeneous hidden Markov modeling of zero-inflated
    count panels with built-in variable selection."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.argument("out_prefix", type=click.Path())
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--replicates", type=int, default=1, show_default=True)
def simulate(config_path, out_prefix, seed, replicates):
    """Generate synthetic panels plus ground-truth files from CONFIG_PATH."""
    try:
        with open(config_path, "rb") as fh:
            raw = io.tomllib.load(fh)
        sim_cfg = raw.get("simulate", {})
        design = sim_cfg.get("design", "zinb_k3")
        if design == "zinb_k3":
            spec = zinb_default_spec()
        elif design == "poisson_k2":
            spec = poisson_default_spec()
        else:
            raise ValueError(f"unknown design {design!r} (line with 'design')")
        if "n_patients" in sim_cfg:
            spec = replace(spec, n_patients=int(sim_cfg["n_patients"]))
        if "t_min" in sim_cfg or "t_max" in sim_cfg:
            t_min = int(sim_cfg.get("t_min", spec.t_range[0]))
            t_max = int(sim_cfg.get("t_max", spec.t_range[1]))
            spec = replace(spec, t_range=(t_min, t_max))
        if sim_cfg.get("effect_scale", 1.0) != 1.0:
            spec = scale_effects(spec, float(sim_cfg["effect_scale"]))
        if sim_cfg.get("noise_covariates", 0):
            spec = add_noise_covariates(spec, int(sim_cfg["noise_covariates"]))
        base_seed = seed if seed is not None else int(sim_cfg.get("seed", 0))
    except (ValueError, KeyError, io.tomllib.TOMLDecodeError) as exc:
        _fail(EXIT_CONFIG, f"bad simulation config: {exc}")
    for rep in range(replicates):
        spec_r = replace(spec, seed=base_seed + rep)
        data, truth = generate_dataset(spec_r)
        suffix = f"_rep{rep}" if replicates > 1 else ""
        data_path = f"{out_prefix}{suffix}.data.txt"
        truth_path = f"{out_prefix}{suffix}.truth.json"
        io.write_dataset(data_path, data)
        with open(truth_path, "w") as fh:
            json.dump({
                "states": [s.tolist() for s in truth.states],
                "transition_mask": truth.transition_mask.astype(int).tolist(),
                "emission_mask": truth.emission_mask.astype(int).tolist(),
                "seed": spec_r.seed,
            }, fh, sort_keys=True)
        click.echo(f"wrote {data_path}: {data.n_patients} patients, "
                   f"{data.total_days} days, {data.n_covariates} covariates")


def _chain_config(fit_cfg, seed, iterations, burn_in, homogeneous):
    chain = fit_cfg.chain
    changes = {"homogeneous": homogeneous}
    if seed is not None:
        changes["seed"] = seed
    if iterations is not None:
        changes["n_iterations"] = iterations
    if burn_in is not None:
        changes["burn_in"] = burn_in
    return replace(chain, **changes)


def _parse_k_grid(text):
    lo, _, hi = text.partition(":")
    return list(range(int(lo), int(hi) + 1))


@main.command()
@click.argument("data_path", type=click.Path(exists=True))
@click.argument("out_prefix", type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="fit configuration file (defaults built in)")
@click.option("--seed", type=int, default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--burn-in", type=int, default=None)
@click.option("--k", type=int, default=None, help="number of latent states")
@click.option("--k-grid", type=str, default=None,
              help="inclusive state-count range, e.g. 2:7; reports DIC per K")
@click.option("--baseline-state", type=int, default=None,
              help="1-based reference state for the transition logits")
@click.option("--homogeneous", is_flag=True,
              help="fit the covariate-free homogeneous submodel")
@click.option("--intercept/--no-intercept", "intercept", default=None,
              help="prepend an intercept column to the design")
@click.option("--truth", "truth_path", type=click.Path(exists=True),
              default=None, help="ground-truth file for scoring")
def fit(data_path, out_prefix, config_path, seed, iterations, burn_in, k,
        k_grid, baseline_state, homogeneous, intercept, truth_path):
    """Run the sampler on DATA_PATH and write chain, report, manifest."""
    try:
        if config_path is None:
            import tempfile
            tmp = tempfile.NamedTemporaryFile(
                "w", suffix=".toml", delete=False)
            tmp.write(io.DEFAULT_CONFIG)
            tmp.close()
            config_path = tmp.name
        fit_cfg = io.parse_config(config_path)
        if k_grid is not None:
            k_values = _parse_k_grid(k_grid)
        else:
            k_values = [k if k is not None else fit_cfg.spec.n_states]
        if any(kv < 1 for kv in k_values):
            raise ValueError("state counts must be >= 1")
    except (ValueError, OSError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        data, names = io.read_dataset(data_path)
    except (ValueError, OSError) as exc:
        _fail(EXIT_DATA, str(exc))
    use_intercept = bool(intercept) or homogeneous or fit_cfg.spec.include_intercept
    if use_intercept:
        data = data.with_intercept()
        names = ["intercept"] + names
    truth = None
    if truth_path is not None:
        with open(truth_path) as fh:
            truth = json.load(fh)
    started = _now()
    try:
        chain_cfg = _chain_config(fit_cfg, seed, iterations, burn_in, homogeneous)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    outputs, dics = [], {}
    conc = float(fit_cfg.raw["priors"]["initial_state_conc"])
    for k_val in k_values:
        priors = replace(fit_cfg.spec.priors,
                         initial_state_conc=np.full(k_val, conc))
        spec = replace(
            fit_cfg.spec, n_states=k_val, include_intercept=use_intercept,
            priors=priors,
            baseline_state=(baseline_state - 1 if baseline_state is not None
                            else None))
        try:
            samples = run_chain(data, spec, chain_cfg)
        except ValueError as exc:
            _fail(EXIT_DATA, str(exc))
        except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            _fail(EXIT_NUMERIC, str(exc))
        kwargs = {}
        if truth is not None and k_val == len(truth["emission_mask"]):
            kwargs = {
                "true_states": [np.asarray(s) for s in truth["states"]],
                "true_transition_mask":
                    np.asarray(truth["transition_mask"], dtype=bool),
                "true_emission_mask":
                    np.asarray(truth["emission_mask"], dtype=bool),
            }
            if use_intercept:  # truth masks lack the intercept column
                kwargs["true_transition_mask"] = np.concatenate(
                    [np.zeros_like(kwargs["true_transition_mask"][..., :1]),
                     kwargs["true_transition_mask"]], axis=-1)
                kwargs["true_emission_mask"] = np.concatenate(
                    [np.zeros_like(kwargs["true_emission_mask"][..., :1]),
                     kwargs["true_emission_mask"]], axis=-1)
        report = build_report(samples, data, spec, **kwargs)
        suffix = f"_k{k_val}" if len(k_values) > 1 else ""
        chain_path = f"{out_prefix}{suffix}.chain"
        report_path = f"{out_prefix}{suffix}.report.txt"
        io.write_chain(chain_path, samples)
        io.write_report(report_path, report, names)
        outputs += [chain_path, report_path]
        dics[k_val] = report.dic
        click.echo(f"K={k_val}: dic {report.dic:.2f} "
                   f"mae {report.mean_absolute_error:.4f}")
    if len(k_values) > 1:
        best = min(dics, key=dics.get)
        click.echo(f"minimum dic at K={best}")
    manifest = io.build_manifest(
        config_path, data_path, chain_cfg.seed, outputs, __version__,
        started=started, finished=_now())
    io.write_manifest(f"{out_prefix}.manifest.json", manifest)


@main.command("replicate-study")
@click.argument("study_config", type=click.Path(exists=True))
@click.argument("out_dir", type=click.Path())
@click.option("--threads", type=int, default=None,
              help="worker count (default: ZINBHMM_THREADS env var or 1)")
@click.option("--replicates", type=int, default=None)
@click.option("--seed", type=int, default=None)
def replicate_study(study_config, out_dir, threads, replicates, seed):
    """Run the scenario grid in STUDY_CONFIG and write aggregate tables."""
    try:
        with open(study_config, "rb") as fh:
            raw = io.tomllib.load(fh)
        study = parse_study_config(raw)
        if replicates is not None:
            study = replace(study, replicates=replicates)
        if seed is not None:
            study = replace(study, seed=seed)
        n_workers = threads or default_threads()
    except (ValueError, TypeError, io.tomllib.TOMLDecodeError) as exc:
        _fail(EXIT_CONFIG, f"bad study config: {exc}")
    rows, failures = run_study(study, out_dir, n_workers=n_workers,
                               log=click.echo)
    click.echo(f"completed {len(rows)} replicates, {len(failures)} failures; "
               f"tables in {out_dir}")
    if failures and not rows:
        sys.exit(EXIT_NUMERIC)


@main.command()
@click.argument("chain_path", type=click.Path(exists=True))
@click.argument("data_path", type=click.Path(exists=True))
@click.argument("out_path", type=click.Path())
@click.option("--baseline-state", type=int, default=None)
@click.option("--intercept", is_flag=True,
              help="data was fitted with a prepended intercept column")
def report(chain_path, data_path, out_path, baseline_state, intercept):
    """Re-summarize an existing chain against its dataset."""
    try:
        samples = io.read_chain(chain_path)
    except (ValueError, OSError) as exc:
        _fail(EXIT_DATA, str(exc))
    try:
        data, names = io.read_dataset(data_path)
    except (ValueError, OSError) as exc:
        _fail(EXIT_DATA, str(exc))
    if intercept:
        data = data.with_intercept()
        names = ["intercept"] + names
    from .data import HmmSpec
    spec = HmmSpec(n_states=samples.n_states,
                   baseline_state=samples.baseline_state,
                   include_intercept=intercept)
    rep = build_report(samples, data, spec)
    io.write_report(out_path, rep, names)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
