"""Metropolis-within-Gibbs sampler: stochastic-search variable selection with
Polya-Gamma augmented coefficient refreshes, CRT dispersion updates, scaled
forward-backward state sampling, and label-switching repair."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from ._pg import pg_batch
from .data import PSI_CEIL, PSI_FLOOR, ChainState
from .rng import RngHandle, sample_crt

# truncation of the fractional-remainder gamma series inside the sweep loop;
# mean-corrected, so the residual error is far below Monte Carlo noise
_ENGINE_PG_TERMS = 32


@dataclass
class ChainConfig:
    n_iterations: int = 20000
    burn_in: int = 10000
    thinning: int = 1
    seed: int = 0
    freeze_selection: bool = False
    homogeneous: bool = False
    store_xi_budget: int = 2_000_000  # store full state draws when kept * N * T fits
    progress: object = None           # optional callable(iteration, loglik, n_included)

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("require 0 <= burn_in < n_iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


@dataclass
class ChainSamples:
    """Post-burn-in draws plus per-iteration summaries."""

    beta: np.ndarray          # (S, K, K, p); baseline target column zero
    gamma: np.ndarray         # (S, K, K, p) bool
    rho: np.ndarray           # (S, K, p)
    delta: np.ndarray         # (S, K, p) bool
    r: np.ndarray             # (S, K)
    p_zero: np.ndarray        # (S, K)
    pi: np.ndarray            # (S, K)
    loglik: np.ndarray        # (S,) observed (state-marginal) log-likelihood
    n_included: np.ndarray    # (S,) included coefficient count, both blocks
    occupancy: np.ndarray     # (N, Tmax, K) state-visit counts over kept draws
    lengths: np.ndarray       # (N,)
    n_states: int
    baseline_state: int
    xi_draws: np.ndarray | None = None  # (S, N, Tmax) int8 when budget allows
    spd_failures: int = 0

    @property
    def n_kept(self):
        return self.loglik.shape[0]

    def modal_states(self):
        """Posterior-mode state path per patient (list of 1-d arrays)."""
        modal = self.occupancy.argmax(axis=2)
        return [modal[i, :ti] for i, ti in enumerate(self.lengths)]


class _Panel:
    """Padded internal layout of a ragged panel."""

    def __init__(self, data):
        self.n = data.n_patients
        self.lengths = data.lengths
        self.t_max = int(self.lengths.max()) if self.n else 0
        self.p = data.n_covariates
        self.y = np.zeros((self.n, self.t_max), dtype=np.int64)
        self.x = np.zeros((self.n, self.t_max, self.p))
        self.valid = np.zeros((self.n, self.t_max), dtype=bool)
        for i, (yy, xx) in enumerate(zip(data.counts, data.covariates)):
            ti = yy.shape[0]
            self.y[i, :ti] = yy
            self.x[i, :ti] = xx
            self.valid[i, :ti] = True
        self.lgamma_y1 = gammaln(self.y + 1.0)
        # flattened valid observations
        self.obs_i, self.obs_t = np.nonzero(self.valid)
        # transition slots: (i, t) with t >= 1, predictors taken at t-1
        trans = self.valid.copy()
        if self.t_max:
            trans[:, 0] = False
        self.trans_i, self.trans_t = np.nonzero(trans)
        self.x_prev = self.x[self.trans_i, self.trans_t - 1]
        self.x_flat = self.x[self.obs_i, self.obs_t]
        self.y_flat = self.y[self.obs_i, self.obs_t]


def _bernoulli_logistic_loglik(eta, y_bin):
    return float(np.sum(y_bin * eta) - np.sum(np.logaddexp(0.0, eta)))


def _nb_loglik_eta(eta, y, r):
    # NB kernel as a function of the linear predictor, constants dropped
    return float(np.sum(y * eta) - np.sum((y + r) * np.logaddexp(0.0, eta)))


class _Sampler:
    def __init__(self, data, spec, config, rng):
        self.data = data
        self.spec = spec
        self.config = config
        self.rng = rng
        self.panel = _Panel(data)
        self.n_states = spec.n_states
        self.baseline = spec.baseline_state
        self.spd_failures = 0
        pri = spec.priors
        self.trans_logit_incl = math.log(pri.transition_incl_a / pri.transition_incl_b)
        self.emis_logit_incl = math.log(pri.emission_incl_a / pri.emission_incl_b)
        if config.homogeneous and not spec.include_intercept:
            raise ValueError("homogeneous submodel requires an intercept column")
        # candidate coefficient positions for selection moves
        self.candidates = np.arange(self.panel.p)
        if config.homogeneous:
            self.candidates = np.array([], dtype=np.int64)

    # -- initialization ----------------------------------------------------

    def init_chain(self):
        pri = self.spec.priors
        gen = self.rng.generator
        K, p = self.n_states, self.panel.p
        prior_g = pri.transition_incl_a / (pri.transition_incl_a + pri.transition_incl_b)
        prior_d = pri.emission_incl_a / (pri.emission_incl_a + pri.emission_incl_b)
        gamma = gen.random((K, K, p)) < prior_g
        gamma[:, self.baseline, :] = False
        delta = gen.random((K, p)) < prior_d
        if self.config.homogeneous:
            gamma[:] = False
            delta[:] = False
            gamma[:, :, 0] = True
            gamma[:, self.baseline, 0] = False
            delta[:, 0] = True
        beta = np.where(
            gamma,
            gen.normal(pri.transition_slab_mean,
                       math.sqrt(pri.transition_slab_var), (K, K, p)),
            0.0,
        )
        rho = np.where(
            delta,
            gen.normal(pri.emission_slab_mean,
                       math.sqrt(pri.emission_slab_var), (K, p)),
            0.0,
        )
        r = np.clip(gen.gamma(pri.dispersion_shape, 1.0 / pri.dispersion_rate, K),
                    0.1, 50.0)
        p_zero = gen.beta(pri.zero_inflation_a, pri.zero_inflation_b, K)
        p_zero = np.clip(p_zero, 1e-12, 1.0 - 1e-12)
        pi = gen.dirichlet(pri.dirichlet_conc(K))
        xi = np.zeros((self.panel.n, self.panel.t_max), dtype=np.int64)
        u = gen.random((self.panel.n, self.panel.t_max))
        cum = np.cumsum(pi)
        xi = np.minimum(np.searchsorted(cum, u.ravel(), side="right").reshape(u.shape),
                        K - 1)
        xi[~self.panel.valid] = 0
        z = ((self.panel.y == 0) & (gen.random(self.panel.y.shape) < 0.5)
             & self.panel.valid).astype(np.int64)
        self.beta, self.gamma = beta, gamma
        self.rho, self.delta = rho, delta
        self.r, self.p_zero, self.pi = r, p_zero, pi
        self.xi, self.z = xi, z

    # -- selection moves and coefficient refresh ---------------------------

    def _select_and_refresh(self, x, eval_loglik, coef, mask, slab_mean, slab_var,
                            logit_incl, offset, pg_b, pg_kappa):
        """One add/delete/swap move plus a within-model PG refresh for a single
        coefficient vector.

        ``eval_loglik(eta)`` scores the linear predictor; ``offset`` is added
        to ``x @ coef`` to form eta. ``pg_b`` is the PG shape per observation
        and ``pg_kappa`` the working response in the Gaussian assembly.
        """
        gen = self.rng.generator
        eta = x @ coef + offset
        if not self.config.freeze_selection and self.candidates.size:
            included = np.flatnonzero(mask)
            excluded = np.setdiff1d(self.candidates, included, assume_unique=False)
            do_swap = (gen.random() < 0.5) and included.size > 0 and excluded.size > 0
            if do_swap:
                j_in = included[gen.integers(included.size)]
                j_out = excluded[gen.integers(excluded.size)]
                prop = gen.normal(slab_mean, math.sqrt(slab_var))
                eta_new = eta + x[:, j_out] * prop - x[:, j_in] * coef[j_in]
                log_ratio = eval_loglik(eta_new) - eval_loglik(eta)
                if math.log(gen.random() + 1e-300) < log_ratio:
                    coef[j_in] = 0.0
                    coef[j_out] = prop
                    mask[j_in] = False
                    mask[j_out] = True
                    eta = eta_new
            else:
                j = self.candidates[gen.integers(self.candidates.size)]
                # the add/delete branch is taken with probability 1/2 except
                # when swap is infeasible (nothing included or nothing
                # excluded), where it absorbs the swap mass; the flip changes
                # that feasibility, so the proposal is asymmetric at the
                # boundary and needs a Hastings correction
                n_inc, n_exc = included.size, excluded.size

                def branch_logp(a, b):
                    return 0.0 if (a == 0 or b == 0) else math.log(0.5)

                if mask[j]:
                    eta_new = eta - x[:, j] * coef[j]
                    log_ratio = (eval_loglik(eta_new) - eval_loglik(eta)
                                 - logit_incl
                                 + branch_logp(n_inc - 1, n_exc + 1)
                                 - branch_logp(n_inc, n_exc))
                else:
                    prop = gen.normal(slab_mean, math.sqrt(slab_var))
                    eta_new = eta + x[:, j] * prop
                    log_ratio = (eval_loglik(eta_new) - eval_loglik(eta)
                                 + logit_incl
                                 + branch_logp(n_inc + 1, n_exc - 1)
                                 - branch_logp(n_inc, n_exc))
                if math.log(gen.random() + 1e-300) < log_ratio:
                    if mask[j]:
                        coef[j] = 0.0
                        mask[j] = False
                    else:
                        coef[j] = prop
                        mask[j] = True
                    eta = eta_new
        included = np.flatnonzero(mask)
        if included.size == 0 or x.shape[0] == 0:
            return
        omega = pg_batch(pg_b, np.ascontiguousarray(eta), self.rng._numba_seed(),
                         _ENGINE_PG_TERMS)
        xj = x[:, included]
        prec = (xj * omega[:, None]).T @ xj
        prec[np.diag_indices_from(prec)] += 1.0 / slab_var
        lin = xj.T @ (pg_kappa - omega * offset) + slab_mean / slab_var
        try:
            chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            self.spd_failures += 1
            return
        mean = np.linalg.solve(prec, lin)
        draw = mean + np.linalg.solve(chol.T, gen.standard_normal(included.size))
        coef[included] = draw

    def update_transition_block(self):
        if self.n_states == 1:
            return
        prev = self.xi[self.trans_prev_i()]
        cur = self.xi[self.panel.trans_i, self.panel.trans_t]
        for k_from in range(self.n_states):
            rows = np.flatnonzero(prev == k_from)
            x = self.panel.x_prev[rows]
            target = cur[rows]
            zeta = x @ self.beta[k_from].T  # (n, K), baseline column all-zero
            for k_to in range(self.n_states):
                if k_to == self.baseline:
                    continue
                others = np.arange(self.n_states) != k_to
                zo = zeta[:, others]
                zmax = zo.max(axis=1) if zo.size else np.zeros(x.shape[0])
                c_off = zmax + np.log(np.exp(zo - zmax[:, None]).sum(axis=1)) \
                    if zo.size else np.zeros(x.shape[0])
                y_bin = (target == k_to).astype(float)

                def loglik(eta, y_bin=y_bin):
                    return _bernoulli_logistic_loglik(eta, y_bin)

                coef = self.beta[k_from, k_to].copy()
                mask = self.gamma[k_from, k_to].copy()
                self._select_and_refresh(
                    x, loglik, coef, mask,
                    self.spec.priors.transition_slab_mean,
                    self.spec.priors.transition_slab_var,
                    self.trans_logit_incl,
                    offset=-c_off,
                    pg_b=np.ones(x.shape[0]),
                    pg_kappa=y_bin - 0.5,
                )
                self.beta[k_from, k_to] = np.where(mask, coef, 0.0)
                self.gamma[k_from, k_to] = mask
                zeta[:, k_to] = x @ self.beta[k_from, k_to]

    def trans_prev_i(self):
        return self.panel.trans_i, self.panel.trans_t - 1

    def _state_obs(self, k):
        sel = (self.xi == k) & (self.z == 0) & self.panel.valid
        i, t = np.nonzero(sel)
        return self.panel.x[i, t], self.panel.y[i, t].astype(float)

    def update_emission_block(self):
        for k in range(self.n_states):
            x, y = self._state_obs(k)
            r_k = self.r[k]

            def loglik(eta, y=y, r_k=r_k):
                return _nb_loglik_eta(eta, y, r_k)

            coef = self.rho[k].copy()
            mask = self.delta[k].copy()
            self._select_and_refresh(
                x, loglik, coef, mask,
                self.spec.priors.emission_slab_mean,
                self.spec.priors.emission_slab_var,
                self.emis_logit_incl,
                offset=0.0,
                pg_b=y + r_k,
                pg_kappa=(y - r_k) / 2.0,
            )
            self.rho[k] = np.where(mask, coef, 0.0)
            self.delta[k] = mask

    def update_dispersion(self):
        pri = self.spec.priors
        for k in range(self.n_states):
            x, y = self._state_obs(k)
            if y.shape[0] == 0:
                draw = self.rng.generator.gamma(
                    pri.dispersion_shape, 1.0 / pri.dispersion_rate)
            else:
                tables = sample_crt(y.astype(np.int64), self.r[k], self.rng)
                psi = np.clip(expit(x @ self.rho[k]), PSI_FLOOR, PSI_CEIL)
                shape = pri.dispersion_shape + tables.sum()
                rate = pri.dispersion_rate - np.log1p(-psi).sum()
                draw = self.rng.generator.gamma(shape, 1.0 / rate)
            # diffuse Gamma(0.01, .) draws can underflow to exact zero, which
            # poisons gammaln(r) and the CRT; keep r strictly positive
            self.r[k] = max(draw, 1e-300)

    def update_zero_inflation(self):
        pri = self.spec.priors
        for k in range(self.n_states):
            sel = (self.xi == k) & self.panel.valid
            n_struct = int((self.z[sel] == 1).sum())
            n_nb = int(sel.sum()) - n_struct
            self.p_zero[k] = np.clip(
                self.rng.generator.beta(pri.zero_inflation_a + n_struct,
                                        pri.zero_inflation_b + n_nb),
                1e-12, 1.0 - 1e-12)

    def update_initial_probs(self):
        conc = self.spec.priors.dirichlet_conc(self.n_states).copy()
        if self.panel.n:
            first = self.xi[:, 0]
            conc += np.bincount(first, minlength=self.n_states)
        draw = self.rng.generator.dirichlet(conc)
        self.pi = draw / draw.sum()

    # -- latent structure --------------------------------------------------

    def _psi_all(self):
        scores = np.einsum("ntp,kp->ntk", self.panel.x, self.rho)
        return np.clip(expit(scores), PSI_FLOOR, PSI_CEIL)

    def _emission_log_probs(self, psi_all):
        y = self.panel.y[:, :, None].astype(float)
        r = self.r[None, None, :]
        p0 = self.p_zero[None, None, :]
        nb = (gammaln(y + r) - gammaln(r) - self.panel.lgamma_y1[:, :, None]
              + r * np.log1p(-psi_all) + y * np.log(psi_all))
        out = np.log1p(-p0) + nb
        zero = np.log(p0 + (1.0 - p0) * np.exp(nb))
        return np.where(self.panel.y[:, :, None] == 0, zero, out)

    def _transition_tensors(self):
        scores = np.einsum("ntp,kjp->ntkj", self.panel.x, self.beta)
        scores -= scores.max(axis=3, keepdims=True)
        probs = np.exp(scores)
        return probs / probs.sum(axis=3, keepdims=True)

    def update_states(self):
        """Joint draw of all state paths via scaled forward filtering and
        backward sampling; returns the observed log-likelihood as a side
        product of the normalizers."""
        n, t_max, K = self.panel.n, self.panel.t_max, self.n_states
        gen = self.rng.generator
        if n == 0 or t_max == 0:
            self.xi = np.zeros((n, t_max), dtype=np.int64)
            self._last_psi_all = np.zeros((n, t_max, K))
            return 0.0
        psi_all = self._psi_all()
        log_emis = self._emission_log_probs(psi_all)
        shifts = log_emis.max(axis=2)
        emis_p = np.exp(log_emis - shifts[:, :, None])
        if K > 1:
            trans = self._transition_tensors()  # trans[i,t] used from day t to t+1
        filt = np.empty((n, t_max, K))
        loglik = float(shifts[self.panel.valid].sum())
        alpha = self.pi[None, :] * emis_p[:, 0]
        norm = alpha.sum(axis=1)
        if np.any(norm <= 0):
            raise FloatingPointError("all-zero emission row in forward pass")
        filt[:, 0] = alpha / norm[:, None]
        loglik += float(np.log(norm).sum())
        for t in range(1, t_max):
            active = self.panel.valid[:, t]
            if K > 1:
                pred = np.einsum("nk,nkj->nj", filt[:, t - 1], trans[:, t - 1])
            else:
                pred = filt[:, t - 1]
            alpha = pred * emis_p[:, t]
            norm = alpha.sum(axis=1)
            if np.any(norm[active] <= 0):
                raise FloatingPointError("all-zero emission row in forward pass")
            norm = np.where(norm > 0, norm, 1.0)
            filt[:, t] = alpha / norm[:, None]
            loglik += float(np.log(norm[active]).sum())
        # backward sampling
        xi = np.zeros((n, t_max), dtype=np.int64)
        last = self.panel.lengths - 1
        for t in range(t_max - 1, -1, -1):
            at_end = last == t
            before_end = (last > t)
            probs = np.zeros((n, K))
            if np.any(at_end):
                probs[at_end] = filt[at_end, t]
            if np.any(before_end):
                nxt = xi[before_end, t + 1]
                if K > 1:
                    probs[before_end] = filt[before_end, t] * \
                        trans[before_end, t, :, nxt]
                else:
                    probs[before_end] = filt[before_end, t]
            rows = at_end | before_end
            if np.any(rows):
                pr = probs[rows]
                cum = np.cumsum(pr, axis=1)
                u = gen.random(int(rows.sum())) * cum[:, -1]
                draw = np.minimum((cum < u[:, None]).sum(axis=1), K - 1)
                xi[rows, t] = draw
        self.xi = xi
        self._last_psi_all = psi_all
        if not math.isfinite(loglik):
            raise FloatingPointError("non-finite forward log-likelihood")
        return loglik

    def update_zero_indicators(self):
        gen = self.rng.generator
        y = self.panel.y
        psi = np.take_along_axis(self._last_psi_all, self.xi[:, :, None],
                                 axis=2)[:, :, 0]
        r = self.r[self.xi]
        p0 = self.p_zero[self.xi]
        nb_zero = np.exp(r * np.log1p(-psi))
        prob = p0 / (p0 + (1.0 - p0) * nb_zero)
        z = ((y == 0) & self.panel.valid & (gen.random(y.shape) < prob))
        self.z = z.astype(np.int64)

    def relabel(self):
        psi_all = self._last_psi_all
        mu = psi_all * self.r[None, None, :] / (1.0 - psi_all)
        m = mu[self.panel.valid].sum(axis=0) if self.panel.n else np.zeros(self.n_states)
        perm = np.argsort(m, kind="stable")
        if np.array_equal(perm, np.arange(self.n_states)):
            return
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.n_states)
        self.r = self.r[perm]
        self.p_zero = self.p_zero[perm]
        self.pi = self.pi[perm]
        self.rho = self.rho[perm]
        self.delta = self.delta[perm]
        self._last_psi_all = psi_all[:, :, perm]
        self.xi = inv[self.xi]
        self.xi[~self.panel.valid] = 0
        beta = self.beta[perm][:, perm]
        # re-anchor on the fixed baseline index: within each from-state row the
        # softmax is invariant to subtracting a common coefficient vector
        beta = beta - beta[:, self.baseline, :][:, None, :]
        self.beta = beta
        self.gamma = beta != 0.0

    # -- main loop ---------------------------------------------------------

    def sweep(self):
        self.update_transition_block()
        self.update_emission_block()
        self.update_dispersion()
        self.update_zero_inflation()
        self.update_initial_probs()
        loglik = self.update_states()
        self.update_zero_indicators()
        self.relabel()
        return loglik

    def chain_state(self):
        lengths = self.panel.lengths
        xi = [self.xi[i, :ti].copy() for i, ti in enumerate(lengths)]
        z = [self.z[i, :ti].copy() for i, ti in enumerate(lengths)]
        return ChainState(beta=self.beta.copy(), gamma=self.gamma.copy(),
                          rho=self.rho.copy(), delta=self.delta.copy(),
                          r=self.r.copy(), p_zero=self.p_zero.copy(),
                          pi=self.pi.copy(), xi=xi, z=z)


def init_chain(data, spec, config, rng=None):
    """Randomly initialized ChainState drawn from the priors."""
    rng = rng or RngHandle(config.seed)
    sampler = _Sampler(data, spec, config, rng)
    sampler.init_chain()
    # relabel needs psi; compute from the initial parameters
    sampler._last_psi_all = sampler._psi_all()
    return sampler.chain_state()


def run_chain(data, spec, config):
    """Execute the full sampler and collect post-burn-in draws."""
    rng = RngHandle(config.seed)
    sampler = _Sampler(data, spec, config, rng)
    sampler.init_chain()
    K, p = spec.n_states, sampler.panel.p
    kept_idx = range(config.burn_in, config.n_iterations, config.thinning)
    n_kept = len(kept_idx)
    store_xi = (n_kept * max(sampler.panel.n * sampler.panel.t_max, 1)
                <= config.store_xi_budget)
    out = ChainSamples(
        beta=np.empty((n_kept, K, K, p)),
        gamma=np.empty((n_kept, K, K, p), dtype=bool),
        rho=np.empty((n_kept, K, p)),
        delta=np.empty((n_kept, K, p), dtype=bool),
        r=np.empty((n_kept, K)),
        p_zero=np.empty((n_kept, K)),
        pi=np.empty((n_kept, K)),
        loglik=np.empty(n_kept),
        n_included=np.empty(n_kept, dtype=np.int64),
        occupancy=np.zeros((sampler.panel.n, sampler.panel.t_max, K),
                           dtype=np.uint32),
        lengths=sampler.panel.lengths.copy(),
        n_states=K,
        baseline_state=spec.baseline_state,
        xi_draws=(np.empty((n_kept, sampler.panel.n, sampler.panel.t_max),
                           dtype=np.int8) if store_xi else None),
    )
    kept = 0
    for s in range(config.n_iterations):
        try:
            loglik = sampler.sweep()
        except Exception as exc:
            raise RuntimeError(f"sampler failed at iteration {s}") from exc
        n_incl = int(sampler.gamma.sum() + sampler.delta.sum())
        if config.progress is not None:
            config.progress(s, loglik, n_incl)
        if s >= config.burn_in and (s - config.burn_in) % config.thinning == 0:
            out.beta[kept] = sampler.beta
            out.gamma[kept] = sampler.gamma
            out.rho[kept] = sampler.rho
            out.delta[kept] = sampler.delta
            out.r[kept] = sampler.r
            out.p_zero[kept] = sampler.p_zero
            out.pi[kept] = sampler.pi
            out.loglik[kept] = loglik
            out.n_included[kept] = n_incl
            valid = sampler.panel.valid
            occ_rows = sampler.xi[valid]
            flat_idx = (np.nonzero(valid)[0] * sampler.panel.t_max
                        + np.nonzero(valid)[1]) * K + occ_rows
            np.add.at(out.occupancy.reshape(-1), flat_idx, 1)
            if store_xi:
                out.xi_draws[kept] = sampler.xi.astype(np.int8)
            kept += 1
    out.spd_failures = sampler.spd_failures
    return out
