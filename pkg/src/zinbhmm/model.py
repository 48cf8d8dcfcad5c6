"""Pure model mathematics: transition probabilities, ZINB emission densities,
the mean process, and complete/marginal log-likelihoods. No randomness here."""

import numpy as np
from scipy.special import expit, gammaln

from .data import PSI_CEIL, PSI_FLOOR


def transition_probs(x_prev, beta_from, baseline_state):
    """Next-state distribution for one from-state under multinomial logit.

    Parameters
    ----------
    x_prev : (p,) covariate vector observed on the previous day.
    beta_from : (K-1, p) coefficients for the non-baseline target states,
        ordered by target-state index with the baseline row omitted.
    baseline_state : index of the target state whose coefficients are fixed
        to zero.

    Returns
    -------
    (K,) probability vector over target states.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    beta_from = np.atleast_2d(np.asarray(beta_from, dtype=float))
    if not np.all(np.isfinite(x_prev)) or not np.all(np.isfinite(beta_from)):
        raise ValueError("non-finite covariate or coefficient")
    n_states = beta_from.shape[0] + 1
    if not 0 <= baseline_state < n_states:
        raise ValueError("baseline_state out of range")
    scores = np.zeros(n_states)
    scores[np.arange(n_states) != baseline_state] = beta_from @ x_prev
    scores -= scores.max()
    probs = np.exp(scores)
    return probs / probs.sum()


def transition_matrix(x_prev, beta, baseline_state):
    """All K from-state rows at once; ``beta`` is the full (K, K, p) tensor
    with the baseline target column already zero."""
    scores = beta @ np.asarray(x_prev, dtype=float)  # (K, K)
    scores -= scores.max(axis=1, keepdims=True)
    probs = np.exp(scores)
    return probs / probs.sum(axis=1, keepdims=True)


def psi_from_covariates(x, rho_k):
    """Logistic NB probability parameter, clamped away from exact 0/1."""
    x = np.asarray(x, dtype=float)
    rho_k = np.asarray(rho_k, dtype=float)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(rho_k)):
        raise ValueError("non-finite input")
    return np.clip(expit(x @ rho_k), PSI_FLOOR, PSI_CEIL)


def nb_mean(r, psi):
    """NB mean mu = psi * r / (1 - psi)."""
    return psi * r / (1.0 - psi)


def nb_log_pmf(y, r, psi):
    """Log-density of the NB distribution in (dispersion, probability) form:
    Gamma(y+r) / (Gamma(r) y!) * (1-psi)^r * psi^y."""
    y = np.asarray(y)
    r = np.asarray(r, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if np.any(y < 0) or np.any(r <= 0):
        raise ValueError("require y >= 0 and r > 0")
    if np.any(psi <= 0) or np.any(psi >= 1):
        raise ValueError("psi must lie strictly in (0, 1)")
    return (
        gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
        + r * np.log1p(-psi) + y * np.log(psi)
    )


def zinb_log_pmf(y, r, psi, p_zero):
    """Log-density of the zero-inflated NB mixture: a point mass at zero with
    weight ``p_zero`` plus NB(r, psi) with weight 1 - p_zero."""
    y = np.asarray(y)
    p_zero = np.asarray(p_zero, dtype=float)
    if np.any(p_zero <= 0) or np.any(p_zero >= 1):
        raise ValueError("p_zero must lie strictly in (0, 1)")
    nb = nb_log_pmf(y, r, psi)
    out = np.log1p(-p_zero) + nb
    zero_mass = np.log(p_zero + (1.0 - p_zero) * np.exp(np.broadcast_to(nb, out.shape)))
    return np.where(y == 0, zero_mass, out)


def emission_log_probs(y, x, rho, r, p_zero):
    """Per-state ZINB log-densities for one patient.

    y : (T,) counts; x : (T, p); rho : (K, p); r, p_zero : (K,).
    Returns (T, K).
    """
    psi = np.clip(expit(x @ rho.T), PSI_FLOOR, PSI_CEIL)  # (T, K)
    return zinb_log_pmf(y[:, None], r[None, :], psi, p_zero[None, :])


def full_log_likelihood(data, state, spec):
    """Complete-data log-likelihood conditional on the latent state paths,
    with the structural-zero indicators marginalized out of the emissions."""
    if len(state.xi) != data.n_patients:
        raise ValueError("state paths do not match dataset")
    total = 0.0
    for y, x, xi in zip(data.counts, data.covariates, state.xi):
        if xi.shape != y.shape:
            raise ValueError("state path length mismatch")
        total += np.log(state.pi[xi[0]])
        emis = emission_log_probs(y, x, state.rho, state.r, state.p_zero)
        total += emis[np.arange(y.shape[0]), xi].sum()
        if spec.n_states > 1:
            for t in range(1, y.shape[0]):
                probs = transition_matrix(x[t - 1], state.beta, spec.baseline_state)
                total += np.log(probs[xi[t - 1], xi[t]])
    return float(total)


def forward_log_likelihood(y, x, beta, rho, r, p_zero, pi, baseline_state):
    """Scaled forward pass for one patient; returns (log-likelihood,
    filtered (T, K) matrix). States are marginalized, Z is marginalized."""
    n_days = y.shape[0]
    n_states = pi.shape[0]
    emis = emission_log_probs(y, x, rho, r, p_zero)
    shifts = emis.max(axis=1)
    emis_p = np.exp(emis - shifts[:, None])
    filtered = np.empty((n_days, n_states))
    loglik = float(shifts.sum())
    alpha = pi * emis_p[0]
    norm = alpha.sum()
    if norm <= 0:
        raise FloatingPointError("all-zero emission row in forward pass")
    filtered[0] = alpha / norm
    loglik += np.log(norm)
    for t in range(1, n_days):
        trans = transition_matrix(x[t - 1], beta, baseline_state)
        alpha = (filtered[t - 1] @ trans) * emis_p[t]
        norm = alpha.sum()
        if norm <= 0:
            raise FloatingPointError("all-zero emission row in forward pass")
        filtered[t] = alpha / norm
        loglik += np.log(norm)
    return loglik, filtered


def observed_log_likelihood(data, beta, rho, r, p_zero, pi, spec):
    """Log-likelihood of the counts with the latent states marginalized by
    the scaled forward algorithm."""
    total = 0.0
    for y, x in zip(data.counts, data.covariates):
        loglik, _ = forward_log_likelihood(
            y, x, beta, rho, r, p_zero, pi, spec.baseline_state
        )
        total += loglik
    return float(total)
