"""Core data containers: panel data, model configuration, and chain state."""

from dataclasses import dataclass, field

import numpy as np

PSI_FLOOR = 1e-10
PSI_CEIL = 1.0 - 1e-10


@dataclass
class HyperPriors:
    """Prior hyperparameters for the full model.

    Gamma parameters use the (shape, rate) convention. Slab means/variances
    apply to every coefficient of the corresponding block.
    """

    zero_inflation_a: float = 1.0        # Beta(c, d) on the structural-zero weight
    zero_inflation_b: float = 1.0
    dispersion_shape: float = 0.01       # Gamma(e, f) on the NB dispersion
    dispersion_rate: float = 0.01
    initial_state_conc: np.ndarray | None = None  # Dirichlet; default all-ones
    transition_slab_mean: float = 0.0
    transition_slab_var: float = 1.0
    emission_slab_mean: float = 0.0
    emission_slab_var: float = 1.0
    transition_incl_a: float = 1.0       # Beta(g, h) on inclusion indicators
    transition_incl_b: float = 5.0
    emission_incl_a: float = 1.0
    emission_incl_b: float = 5.0

    def validate(self, n_states):
        pos = [
            self.zero_inflation_a, self.zero_inflation_b,
            self.dispersion_shape, self.dispersion_rate,
            self.transition_slab_var, self.emission_slab_var,
            self.transition_incl_a, self.transition_incl_b,
            self.emission_incl_a, self.emission_incl_b,
        ]
        if any(not np.isfinite(v) or v <= 0 for v in pos):
            raise ValueError("all prior variances and Beta/Gamma parameters must be > 0")
        conc = self.dirichlet_conc(n_states)
        if conc.shape != (n_states,) or np.any(conc <= 0):
            raise ValueError("Dirichlet concentration must be positive with length K")

    def dirichlet_conc(self, n_states):
        if self.initial_state_conc is None:
            return np.ones(n_states)
        return np.asarray(self.initial_state_conc, dtype=float)


@dataclass
class HmmSpec:
    """Number of states, baseline-state anchoring, and priors for one fit."""

    n_states: int
    baseline_state: int | None = None    # 0-based; defaults to the last state
    include_intercept: bool = False
    priors: HyperPriors = field(default_factory=HyperPriors)

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.baseline_state is None:
            self.baseline_state = self.n_states - 1
        if not 0 <= self.baseline_state < self.n_states:
            raise ValueError(f"baseline_state {self.baseline_state} out of range for K={self.n_states}")
        self.priors.validate(self.n_states)


class PanelDataset:
    """Ragged panel of per-patient daily counts and covariate rows.

    Parameters
    ----------
    counts : sequence of 1-d integer arrays, one per patient (length T_i).
    covariates : sequence of (T_i, p) arrays aligned with ``counts``.
    covariate_names : optional list of p names.
    """

    def __init__(self, counts, covariates, covariate_names=None):
        if len(counts) != len(covariates):
            raise ValueError("counts and covariates must have one entry per patient")
        if len(counts) == 0:
            self.counts = []
            self.covariates = []
            self.n_covariates = 0 if covariate_names is None else len(covariate_names)
            self.covariate_names = list(covariate_names or [])
            return
        self.counts = [np.ascontiguousarray(y, dtype=np.int64) for y in counts]
        self.covariates = [np.ascontiguousarray(x, dtype=float) for x in covariates]
        p = self.covariates[0].shape[1]
        for i, (y, x) in enumerate(zip(self.counts, self.covariates)):
            if y.ndim != 1 or np.any(y < 0):
                raise ValueError(f"patient {i}: counts must be 1-d and non-negative")
            if x.ndim != 2 or x.shape != (y.shape[0], p):
                raise ValueError(f"patient {i}: covariate block must be ({y.shape[0]}, {p})")
            if y.shape[0] < 2:
                raise ValueError(f"patient {i}: needs at least 2 days (one transition)")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"patient {i}: non-finite covariate value")
        self.n_covariates = p
        self.covariate_names = list(covariate_names) if covariate_names else [
            f"x{j + 1}" for j in range(p)
        ]
        if len(self.covariate_names) != p:
            raise ValueError("covariate_names length must equal covariate dimension")

    @property
    def n_patients(self):
        return len(self.counts)

    @property
    def lengths(self):
        return np.array([y.shape[0] for y in self.counts], dtype=np.int64)

    @property
    def total_days(self):
        return int(self.lengths.sum()) if self.n_patients else 0

    def with_intercept(self):
        """Return a copy with a leading all-ones column prepended."""
        covs = [np.hstack([np.ones((x.shape[0], 1)), x]) for x in self.covariates]
        return PanelDataset(self.counts, covs, ["intercept"] + self.covariate_names)

    def __eq__(self, other):
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return (
            self.covariate_names == other.covariate_names
            and len(self.counts) == len(other.counts)
            and all(np.array_equal(a, b) for a, b in zip(self.counts, other.counts))
            and all(np.array_equal(a, b) for a, b in zip(self.covariates, other.covariates))
        )


@dataclass
class ChainState:
    """One MCMC configuration of all model parameters and latent variables.

    ``beta`` and ``gamma`` are (K, K, p) with the baseline target column
    identically zero; ``rho`` and ``delta`` are (K, p). ``xi`` and ``z`` are
    lists of per-patient integer arrays.
    """

    beta: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    delta: np.ndarray
    r: np.ndarray
    p_zero: np.ndarray
    pi: np.ndarray
    xi: list
    z: list

    def copy(self):
        return ChainState(
            beta=self.beta.copy(), gamma=self.gamma.copy(),
            rho=self.rho.copy(), delta=self.delta.copy(),
            r=self.r.copy(), p_zero=self.p_zero.copy(), pi=self.pi.copy(),
            xi=[x.copy() for x in self.xi], z=[z.copy() for z in self.z],
        )

    def check_invariants(self, data, spec, atol=1e-12):
        """Raise AssertionError on any structural violation."""
        b = spec.baseline_state
        assert np.all(self.beta[:, b, :] == 0.0), "baseline target column must be zero"
        assert np.all(self.gamma[:, b, :] == 0), "baseline target indicators must be zero"
        assert np.all((self.gamma == 0) <= (self.beta == 0.0)), "gamma=0 requires beta=0"
        assert np.all((self.delta == 0) <= (self.rho == 0.0)), "delta=0 requires rho=0"
        assert np.all(self.r > 0)
        assert np.all((self.p_zero > 0) & (self.p_zero < 1))
        assert abs(self.pi.sum() - 1.0) < atol, "pi must sum to 1"
        for y, z in zip(data.counts, self.z):
            assert np.all(z[y > 0] == 0), "structural-zero flag on a positive count"
