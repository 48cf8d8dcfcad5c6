"""Seedable random-variate kernels used by the augmentation schemes."""

import numpy as np

from ._pg import pg_batch


class RngHandle:
    """Reproducible random stream: identical (seed, stream) pairs yield
    identical draw sequences across every kernel in this module."""

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.generator = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        )

    def substream(self, stream):
        """Independent handle with the same seed and a different stream id."""
        return RngHandle(self.seed, stream)

    def _numba_seed(self):
        return int(self.generator.integers(0, 2**31 - 1))


def sample_polya_gamma(b, c, rng):
    """Draw from PG(b, c); accepts scalars or matching 1-d arrays."""
    b_arr = np.atleast_1d(np.asarray(b, dtype=float))
    c_arr = np.broadcast_to(np.asarray(c, dtype=float), b_arr.shape).astype(float)
    if np.any(b_arr <= 0):
        raise ValueError("PG shape parameter b must be > 0")
    if not np.all(np.isfinite(c_arr)):
        raise ValueError("PG tilt parameter c must be finite")
    out = pg_batch(np.ascontiguousarray(b_arr), np.ascontiguousarray(c_arr),
                   rng._numba_seed())
    return float(out[0]) if np.isscalar(b) or np.ndim(b) == 0 else out


def sample_crt(y, r, rng):
    """Chinese-restaurant-table draw: number of tables after y customers with
    concentration r. Accepts a scalar count or an array of counts."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any(y_arr < 0) or r <= 0:
        raise ValueError("require y >= 0 and r > 0")
    tables = np.zeros(y_arr.shape[0], dtype=np.int64)
    y_max = int(y_arr.max()) if y_arr.size else 0
    for seat in range(1, y_max + 1):
        mask = y_arr >= seat
        n_active = int(mask.sum())
        prob = r / (r + seat - 1.0)
        tables[mask] += rng.generator.random(n_active) < prob
    return int(tables[0]) if np.ndim(y) == 0 else tables


def sample_gaussian_vec(mean, cov, rng):
    """Multivariate Gaussian draw via Cholesky; reports the failing pivot on
    a non-positive-definite covariance."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pivot = _failing_pivot(cov)
        raise np.linalg.LinAlgError(
            f"covariance is not positive definite (failing pivot {pivot})"
        ) from None
    return mean + chol @ rng.generator.standard_normal(mean.shape[0])


def _failing_pivot(cov):
    for k in range(1, cov.shape[0] + 1):
        try:
            np.linalg.cholesky(cov[:k, :k])
        except np.linalg.LinAlgError:
            return k - 1
    return cov.shape[0] - 1


def sample_beta(a, b, rng):
    if a <= 0 or b <= 0:
        raise ValueError("Beta parameters must be > 0")
    return float(rng.generator.beta(a, b))


def sample_gamma(shape, rate, rng):
    """Gamma draw under the (shape, rate) convention."""
    if shape <= 0 or rate <= 0:
        raise ValueError("Gamma parameters must be > 0")
    return float(rng.generator.gamma(shape, 1.0 / rate))


def sample_dirichlet(conc, rng):
    conc = np.asarray(conc, dtype=float)
    if np.any(conc <= 0):
        raise ValueError("Dirichlet concentration must be > 0")
    draw = rng.generator.dirichlet(conc)
    return draw / draw.sum()


def sample_categorical(probs, rng):
    """Index draw with the stated probabilities (normalized internally)."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or probs.sum() <= 0:
        raise ValueError("categorical probabilities must be non-negative and sum > 0")
    u = rng.generator.random()
    idx = np.searchsorted(np.cumsum(probs / probs.sum()), u, side="right")
    return int(min(idx, probs.size - 1))
