"""Dataset, chain, config, and manifest persistence.

Datasets travel as structured text (header plus per-patient blocks) so they
stay inspectable; chains use a length-prefixed binary layout because tens of
thousands of kept tensor draws make plain text impractical.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

try:
    import tomllib
except ImportError:  # < 3.11
    import tomli as tomllib

import numpy as np

from .data import HmmSpec, HyperPriors, PanelDataset
from .mcmc import ChainConfig, ChainSamples

CHAIN_MAGIC = b"ZNBCHAIN"
CHAIN_SCHEMA_VERSION = 1


# ---------------------------------------------------------------- datasets

def write_dataset(path, data, covariate_names=None):
    """Text serialization: a header line with N and p, covariate names, then
    one block per patient of (day, count, covariates). Covariates print with
    17 significant digits so the round trip is exact."""
    names = covariate_names or [f"x{j + 1}" for j in range(data.n_covariates)]
    if len(names) != data.n_covariates:
        raise ValueError("need one name per covariate column")
    lines = [f"patients {data.n_patients} covariates {data.n_covariates}",
             "names " + " ".join(names)]
    for i, (y, x) in enumerate(zip(data.counts, data.covariates)):
        lines.append(f"patient {i} days {y.shape[0]}")
        for t in range(y.shape[0]):
            row = " ".join(f"{v:.17g}" for v in x[t])
            lines.append(f"{t} {int(y[t])} {row}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path):
    """Inverse of write_dataset; returns (PanelDataset, covariate_names)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    try:
        head = lines[0].split()
        n_patients, p = int(head[1]), int(head[3])
        names = lines[1].split()[1:]
        if len(names) != p:
            raise ValueError(f"header names count {len(names)} != covariates {p}")
        counts, covariates = [], []
        pos = 2
        for i in range(n_patients):
            block = lines[pos].split()
            if block[0] != "patient" or int(block[1]) != i:
                raise ValueError(f"expected patient {i} block at line {pos + 1}")
            t_i = int(block[3])
            pos += 1
            y = np.empty(t_i, dtype=np.int64)
            x = np.empty((t_i, p))
            for t in range(t_i):
                parts = lines[pos].split()
                if int(parts[0]) != t:
                    raise ValueError(
                        f"patient {i}: expected day {t} at line {pos + 1}")
                y[t] = int(parts[1])
                x[t] = [float(v) for v in parts[2:]]
                pos += 1
            counts.append(y)
            covariates.append(x)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed dataset file {path}: {exc}") from exc
    return PanelDataset(counts, covariates), names


# ------------------------------------------------------------------ chains

def _write_block(fh, arr):
    arr = np.ascontiguousarray(arr)
    header = json.dumps({"dtype": arr.dtype.str, "shape": arr.shape}).encode()
    fh.write(struct.pack("<I", len(header)))
    fh.write(header)
    raw = arr.tobytes()
    fh.write(struct.pack("<Q", len(raw)))
    fh.write(raw)


def _read_block(fh):
    (hlen,) = struct.unpack("<I", fh.read(4))
    meta = json.loads(fh.read(hlen).decode())
    (blen,) = struct.unpack("<Q", fh.read(8))
    raw = fh.read(blen)
    if len(raw) != blen:
        raise ValueError("truncated chain file")
    return np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()


_CHAIN_ARRAYS = ("beta", "gamma", "rho", "delta", "r", "p_zero", "pi",
                 "loglik", "n_included", "occupancy", "lengths")


def write_chain(path, samples):
    with open(path, "wb") as fh:
        fh.write(CHAIN_MAGIC)
        meta = {
            "schema_version": CHAIN_SCHEMA_VERSION,
            "n_states": samples.n_states,
            "baseline_state": samples.baseline_state,
            "spd_failures": samples.spd_failures,
            "has_xi": samples.xi_draws is not None,
        }
        raw = json.dumps(meta, sort_keys=True).encode()
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for name in _CHAIN_ARRAYS:
            _write_block(fh, getattr(samples, name))
        if samples.xi_draws is not None:
            _write_block(fh, samples.xi_draws)


def read_chain(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHAIN_MAGIC))
        if magic != CHAIN_MAGIC:
            raise ValueError(f"{path} is not a chain file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(mlen).decode())
        if meta["schema_version"] != CHAIN_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported chain schema {meta['schema_version']}")
        blocks = {name: _read_block(fh) for name in _CHAIN_ARRAYS}
        xi = _read_block(fh) if meta["has_xi"] else None
    return ChainSamples(
        **blocks, n_states=meta["n_states"],
        baseline_state=meta["baseline_state"], xi_draws=xi,
        spd_failures=meta["spd_failures"])


# ------------------------------------------------------------------ config

DEFAULT_CONFIG = """\
# fit configuration
[model]
n_states = 3
include_intercept = false

[chain]
iterations = 20000
burn_in = 10000
thinning = 1
seed = 0

[priors]
zero_inflation_a = 1.0
zero_inflation_b = 1.0
dispersion_shape = 0.01
dispersion_rate = 0.01
initial_state_conc = 1.0
transition_slab_mean = 0.0
transition_slab_var = 1.0
emission_slab_mean = 0.0
emission_slab_var = 1.0
transition_incl_a = 1.0
transition_incl_b = 5.0
emission_incl_a = 1.0
emission_incl_b = 5.0
"""


@dataclass
class FitConfig:
    spec: HmmSpec
    chain: ChainConfig
    raw: dict = field(default_factory=dict)


def parse_config(path):
    """Read a TOML fit config; unspecified keys fall back to defaults."""
    defaults = tomllib.loads(DEFAULT_CONFIG)
    try:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"malformed config {path}: {exc}") from exc
    merged = {}
    for section in defaults:
        merged[section] = dict(defaults[section])
        extra = user.get(section, {})
        unknown = set(extra) - set(merged[section]) - {"baseline_state"}
        if unknown:
            raise ValueError(
                f"config {path}: unknown keys in [{section}]: {sorted(unknown)}")
        merged[section].update(extra)
    unknown_sections = set(user) - set(defaults)
    if unknown_sections:
        raise ValueError(
            f"config {path}: unknown sections {sorted(unknown_sections)}")
    pr = dict(merged["priors"])
    conc = pr.pop("initial_state_conc")
    n_states = int(merged["model"]["n_states"])
    priors = HyperPriors(
        initial_state_conc=np.full(n_states, float(conc)), **pr)
    mdl = merged["model"]
    spec = HmmSpec(
        n_states=int(mdl["n_states"]),
        baseline_state=mdl.get("baseline_state"),
        include_intercept=bool(mdl["include_intercept"]),
        priors=priors,
    )
    ch = merged["chain"]
    chain = ChainConfig(
        n_iterations=int(ch["iterations"]), burn_in=int(ch["burn_in"]),
        thinning=int(ch["thinning"]), seed=int(ch["seed"]))
    return FitConfig(spec=spec, chain=chain, raw=merged)


# ---------------------------------------------------------------- manifest

def _hash_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(config_path, data_path, seed, outputs, version,
                   started=None, finished=None):
    return {
        "config_hash": _hash_file(config_path),
        "data_hash": _hash_file(data_path),
        "seed": int(seed),
        "version": version,
        "started": started,
        "finished": finished,
        "outputs": list(outputs),
    }


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)


# ------------------------------------------------------------------ report

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _fmt_array(arr):
    return np.array2string(np.asarray(arr), precision=4, suppress_small=True,
                           max_line_width=100, separator=", ")


def render_report(report, covariate_names=None):
    """Plain-text posterior report; identical inputs render identically."""
    lines = ["posterior report", "=" * 16, ""]
    lines.append("transition inclusion probabilities:")
    lines.append(_fmt_array(report.mppi_transition))
    lines.append("emission inclusion probabilities:")
    lines.append(_fmt_array(report.mppi_emission))
    lines.append("")
    lines.append("selected transition coefficients (median probability):")
    lines.append(_fmt_array(report.selected_transition.astype(int)))
    lines.append("selected emission coefficients (median probability):")
    lines.append(_fmt_array(report.selected_emission.astype(int)))
    lines.append("")
    lines.append("posterior means:")
    lines.append("beta " + _fmt_array(report.beta_mean))
    lines.append("rho " + _fmt_array(report.rho_mean))
    lines.append("r " + _fmt_array(report.r_mean))
    lines.append("p_zero " + _fmt_array(report.p_zero_mean))
    lines.append("pi " + _fmt_array(report.pi_mean))
    lines.append("")
    lines.append("95% credible intervals (lower / upper):")
    lines.append("r " + _fmt_array(report.r_ci))
    lines.append("p_zero " + _fmt_array(report.p_zero_ci))
    lines.append("")
    lines.append(f"dic {_fmt(report.dic)}")
    lines.append(f"mean_absolute_error {_fmt(report.mean_absolute_error)}")
    lines.append("")
    lines.append("averaged transition matrix (mean):")
    lines.append(_fmt_array(report.avg_transition_matrix))
    lines.append("averaged transition matrix (sd):")
    lines.append(_fmt_array(report.avg_transition_sd))
    lines.append("")
    lines.append("sojourn times by state:")
    for k in sorted(report.sojourn):
        info = report.sojourn[k]
        if info is None:
            lines.append(f"state {k + 1}: never visited")
        else:
            lo, hi = info["iqr"]
            lines.append(
                f"state {k + 1}: mean {_fmt(info['mean'])} "
                f"iqr [{_fmt(lo)}, {_fmt(hi)}] runs {info['n_runs']}")
    if report.macro is not None:
        lines.append("")
        lines.append("state classification (macro):")
        for key in ("accuracy", "precision", "sensitivity", "specificity", "f1"):
            lines.append(f"{key} {_fmt(report.macro[key])}")
    for label, metrics in (("transition", report.selection_transition),
                           ("emission", report.selection_emission)):
        if metrics is not None:
            lines.append("")
            lines.append(f"{label} selection metrics:")
            for key in ("n_selected", "fnr", "fpr", "precision",
                        "sensitivity", "specificity", "f1"):
                lines.append(f"{key} {_fmt(metrics[key])}")
    return "\n".join(lines) + "\n"


def write_report(path, report, covariate_names=None):
    with open(path, "w") as fh:
        fh.write(render_report(report, covariate_names))
