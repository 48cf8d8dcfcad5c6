"""Posterior summarization, model selection, classification metrics, and
study-level report assembly from stored chain draws."""

from dataclasses import dataclass

import numpy as np

from .model import nb_mean, observed_log_likelihood, psi_from_covariates, transition_matrix


@dataclass
class PosteriorReport:
    mppi_transition: np.ndarray
    mppi_emission: np.ndarray
    selected_transition: np.ndarray   # median-probability mask
    selected_emission: np.ndarray
    modal_transition: np.ndarray      # most-often-visited model mask
    modal_emission: np.ndarray
    aic_transition: np.ndarray
    aic_emission: np.ndarray
    bic_transition: np.ndarray
    bic_emission: np.ndarray
    beta_mean: np.ndarray
    beta_ci: np.ndarray               # (2, K, K, p) lower/upper
    rho_mean: np.ndarray
    rho_ci: np.ndarray
    r_mean: np.ndarray
    r_ci: np.ndarray
    p_zero_mean: np.ndarray
    p_zero_ci: np.ndarray
    pi_mean: np.ndarray
    pi_ci: np.ndarray
    modal_states: list
    dic: float
    mean_absolute_error: float
    sojourn: dict
    avg_transition_matrix: np.ndarray
    avg_transition_sd: np.ndarray
    macro: dict | None = None
    selection_transition: dict | None = None
    selection_emission: dict | None = None


def mppi(samples):
    """Marginal posterior inclusion probabilities for both blocks."""
    return samples.gamma.mean(axis=0), samples.delta.mean(axis=0)


def median_probability_masks(samples):
    g, d = mppi(samples)
    return g > 0.5, d > 0.5


def most_probable_model(samples):
    """Modal inclusion vector per transition row and per emission state;
    ties break toward fewer included variables, then lexicographically."""
    def modal_mask(draws):  # (S, p) binary
        keys, counts = np.unique(draws, axis=0, return_counts=True)
        order = sorted(
            range(keys.shape[0]),
            key=lambda i: (-counts[i], keys[i].sum(), keys[i].tolist()),
        )
        return keys[order[0]].astype(bool)

    K = samples.n_states
    p = samples.gamma.shape[3]
    trans = np.zeros((K, K, p), dtype=bool)
    for k_from in range(K):
        for k_to in range(K):
            if k_to == samples.baseline_state:
                continue
            trans[k_from, k_to] = modal_mask(samples.gamma[:, k_from, k_to].astype(np.int8))
    emis = np.zeros((K, p), dtype=bool)
    for k in range(K):
        emis[k] = modal_mask(samples.delta[:, k].astype(np.int8))
    return trans, emis


def information_criterion(samples, data, criterion="AIC"):
    """Per-iteration AIC/BIC values; the constant parameter count shared by
    all iterations shifts every value equally."""
    k_const = samples.n_states * 3  # r, p, and free pi dims + baseline slack
    k_s = samples.n_included + k_const
    if criterion.upper() == "AIC":
        return -2.0 * samples.loglik + 2.0 * k_s
    if criterion.upper() == "BIC":
        return -2.0 * samples.loglik + k_s * np.log(max(data.total_days, 1))
    raise ValueError("criterion must be 'AIC' or 'BIC'")


def ic_selected_model(samples, data, criterion="AIC"):
    """Masks and parameter values at the iteration minimizing the criterion."""
    values = information_criterion(samples, data, criterion)
    s = int(np.argmin(values))
    return {
        "iteration": s,
        "value": float(values[s]),
        "transition_mask": samples.gamma[s].copy(),
        "emission_mask": samples.delta[s].copy(),
        "beta": samples.beta[s].copy(),
        "rho": samples.rho[s].copy(),
        "r": samples.r[s].copy(),
        "p_zero": samples.p_zero[s].copy(),
        "pi": samples.pi[s].copy(),
    }


def posterior_point_estimate(samples):
    """Posterior means with the median-probability masks applied to the
    coefficient blocks."""
    g_mask, d_mask = median_probability_masks(samples)
    return {
        "beta": np.where(g_mask, samples.beta.mean(axis=0), 0.0),
        "rho": np.where(d_mask, samples.rho.mean(axis=0), 0.0),
        "r": samples.r.mean(axis=0),
        "p_zero": samples.p_zero.mean(axis=0),
        "pi": samples.pi.mean(axis=0),
    }


def dic(samples, data, spec):
    """Deviance information criterion on the state-marginalized likelihood,
    evaluated at the masked posterior-mean parameter point."""
    point = posterior_point_estimate(samples)
    ll_hat = observed_log_likelihood(
        data, point["beta"], point["rho"], point["r"], point["p_zero"],
        point["pi"], spec)
    if not np.all(np.isfinite(samples.loglik)):
        bad = int(np.flatnonzero(~np.isfinite(samples.loglik))[0])
        raise FloatingPointError(f"non-finite stored log-likelihood at draw {bad}")
    p_dic = 2.0 * (ll_hat - samples.loglik.mean())
    return -2.0 * ll_hat + 2.0 * p_dic


def macro_metrics(true_states, decoded_states, n_states):
    """One-vs-rest confusion metrics averaged with equal state weight.

    Zero-denominator per-state ratios contribute 0 while still counting in
    the divisor, keeping the averages defined on degenerate decodings.
    """
    t = np.concatenate([np.asarray(s) for s in true_states])
    d = np.concatenate([np.asarray(s) for s in decoded_states])
    if t.shape != d.shape:
        raise ValueError("true and decoded state paths must align")
    acc = prec = sens = spec = 0.0
    for k in range(n_states):
        tp = float(np.sum((t == k) & (d == k)))
        fp = float(np.sum((t != k) & (d == k)))
        fn = float(np.sum((t == k) & (d != k)))
        tn = float(np.sum((t != k) & (d != k)))
        total = tp + fp + tn + fn
        acc += (tp + tn) / total if total else 0.0
        prec += tp / (tp + fp) if tp + fp else 0.0
        sens += tp / (tp + fn) if tp + fn else 0.0
        spec += tn / (tn + fp) if tn + fp else 0.0
    acc, prec, sens, spec = (v / n_states for v in (acc, prec, sens, spec))
    f1 = 2.0 * prec * sens / (prec + sens) if prec + sens else 0.0
    return {"accuracy": acc, "precision": prec, "sensitivity": sens,
            "specificity": spec, "f1": f1}


def selection_metrics(true_mask, selected_mask):
    """Confusion metrics over coefficient positions."""
    t = np.asarray(true_mask, dtype=bool).ravel()
    s = np.asarray(selected_mask, dtype=bool).ravel()
    if t.shape != s.shape:
        raise ValueError("masks must have equal shape")
    tp = float(np.sum(t & s))
    fp = float(np.sum(~t & s))
    fn = float(np.sum(t & ~s))
    tn = float(np.sum(~t & ~s))
    prec = tp / (tp + fp) if tp + fp else 0.0
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    f1 = 2 * prec * sens / (prec + sens) if prec + sens else 0.0
    return {
        "n_selected": int(s.sum()),
        "fnr": fn / (tp + fn) if tp + fn else 0.0,
        "fpr": fp / (fp + tn) if fp + tn else 0.0,
        "precision": prec, "sensitivity": sens, "specificity": spec, "f1": f1,
    }


def nonbaseline_mask(mask, baseline_state):
    """Drop the baseline target column from a (K, K, p) transition mask."""
    mask = np.asarray(mask)
    keep = np.arange(mask.shape[1]) != baseline_state
    return mask[:, keep, :]


def mean_sojourn_times(decoded_states, n_states):
    """Run lengths of consecutive equal states pooled across patients,
    censored boundary runs included; per state mean and 25/75 percentiles."""
    runs = {k: [] for k in range(n_states)}
    for path in decoded_states:
        path = np.asarray(path)
        if path.size == 0:
            continue
        changes = np.flatnonzero(np.diff(path) != 0)
        starts = np.concatenate([[0], changes + 1])
        ends = np.concatenate([changes + 1, [path.size]])
        for a, b in zip(starts, ends):
            runs[int(path[a])].append(b - a)
    out = {}
    for k in range(n_states):
        if runs[k]:
            arr = np.array(runs[k], dtype=float)
            out[k] = {"mean": float(arr.mean()),
                      "iqr": (float(np.percentile(arr, 25)),
                              float(np.percentile(arr, 75))),
                      "n_runs": len(arr)}
        else:
            out[k] = None
    return out


def averaged_transition_matrix(samples, data, spec):
    """Transition probabilities at the posterior-mean coefficients evaluated
    at every patient-day predictor, then averaged; returns (mean, sd)."""
    beta_mean = samples.beta.mean(axis=0)
    rows = []
    for x in data.covariates:
        for t in range(1, x.shape[0]):
            rows.append(transition_matrix(x[t - 1], beta_mean, spec.baseline_state))
    if not rows:
        K = spec.n_states
        return np.full((K, K), 1.0 / K), np.zeros((K, K))
    stack = np.stack(rows)
    return stack.mean(axis=0), stack.std(axis=0)


def fitted_means(samples, data, spec, conditional=False):
    """Per patient-day fitted mean under the decoded modal state; by default
    the unconditional ZINB mean (1 - p) * mu, or the NB-component mean when
    ``conditional`` is set."""
    point = posterior_point_estimate(samples)
    modal = samples.modal_states()
    out = []
    for x, path in zip(data.covariates, modal):
        psi = np.stack([psi_from_covariates(x[t], point["rho"][path[t]])
                        for t in range(x.shape[0])])
        mu = nb_mean(point["r"][path], psi)
        if not conditional:
            mu = (1.0 - point["p_zero"][path]) * mu
        out.append(mu)
    return out


def mean_absolute_error(samples, data, spec, conditional=False):
    mus = fitted_means(samples, data, spec, conditional=conditional)
    num = sum(float(np.abs(y - mu).sum()) for y, mu in zip(data.counts, mus))
    return num / max(data.total_days, 1)


def credible_interval(draws, level=0.95):
    lo = (1.0 - level) / 2.0
    return np.quantile(draws, [lo, 1.0 - lo], axis=0)


def build_report(samples, data, spec, true_states=None, true_transition_mask=None,
                 true_emission_mask=None):
    """Assemble the full posterior report; ground-truth arguments add the
    classification and selection metric sections."""
    g_mppi, d_mppi = mppi(samples)
    g_mask, d_mask = median_probability_masks(samples)
    mp_trans, mp_emis = most_probable_model(samples)
    aic_pick = ic_selected_model(samples, data, "AIC")
    bic_pick = ic_selected_model(samples, data, "BIC")
    modal = samples.modal_states()
    report = PosteriorReport(
        mppi_transition=g_mppi, mppi_emission=d_mppi,
        selected_transition=g_mask, selected_emission=d_mask,
        modal_transition=mp_trans, modal_emission=mp_emis,
        aic_transition=aic_pick["transition_mask"],
        aic_emission=aic_pick["emission_mask"],
        bic_transition=bic_pick["transition_mask"],
        bic_emission=bic_pick["emission_mask"],
        beta_mean=samples.beta.mean(axis=0),
        beta_ci=credible_interval(samples.beta),
        rho_mean=samples.rho.mean(axis=0),
        rho_ci=credible_interval(samples.rho),
        r_mean=samples.r.mean(axis=0), r_ci=credible_interval(samples.r),
        p_zero_mean=samples.p_zero.mean(axis=0),
        p_zero_ci=credible_interval(samples.p_zero),
        pi_mean=samples.pi.mean(axis=0), pi_ci=credible_interval(samples.pi),
        modal_states=modal,
        dic=dic(samples, data, spec),
        mean_absolute_error=mean_absolute_error(samples, data, spec),
        sojourn=mean_sojourn_times(modal, spec.n_states),
        avg_transition_matrix=averaged_transition_matrix(samples, data, spec)[0],
        avg_transition_sd=averaged_transition_matrix(samples, data, spec)[1],
    )
    if true_states is not None:
        report.macro = macro_metrics(true_states, modal, spec.n_states)
    if true_transition_mask is not None:
        report.selection_transition = selection_metrics(
            nonbaseline_mask(true_transition_mask, spec.baseline_state),
            nonbaseline_mask(g_mask, spec.baseline_state))
    if true_emission_mask is not None:
        report.selection_emission = selection_metrics(true_emission_mask, d_mask)
    return report
