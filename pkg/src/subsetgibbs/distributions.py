"""Seeded variate generation and density evaluation.

Every random quantity in the sampler flows through the functions here so
that a run is a pure function of its 64-bit seed: same seed and same call
sequence means a bit-identical variate stream.  Streams are
``numpy.random.Generator`` instances (PCG64); worker streams are derived
from a master seed with ``spawn_rng`` so concurrency cannot perturb
results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import InvalidParameterError

__all__ = [
    "make_rng",
    "spawn_seed",
    "spawn_rng",
    "draw_normal",
    "draw_inverse_gamma",
    "sample_active_indices",
    "draw_srswor",
    "MlbParams",
    "mlb_log_density",
]


def make_rng(seed: int) -> np.random.Generator:
    """Create a deterministic generator from a 64-bit unsigned seed."""
    if not (0 <= int(seed) < 2**64):
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(int(seed))


def spawn_seed(master_seed: int, index: int) -> int:
    """Derive the ``index``-th worker seed from a master seed.

    The derivation is a pure function of ``(master_seed, index)``, so a
    sweep's per-task streams do not depend on scheduling order or on the
    number of workers.
    """
    if index < 0:
        raise InvalidParameterError(f"spawn index must be nonnegative, got {index}")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def spawn_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator seeded with ``spawn_seed(master_seed, index)``."""
    return make_rng(spawn_seed(master_seed, index))


def draw_normal(mean: float, variance: float, rng: np.random.Generator) -> float:
    """One draw from Normal(mean, variance).

    Parameters
    ----------
    mean : float
    variance : float
        Must be strictly positive (a zero-variance "draw" is a constant,
        which callers should not route through the RNG).
    rng : numpy.random.Generator

    Returns
    -------
    float
    """
    if not np.isfinite(mean):
        raise InvalidParameterError(f"mean must be finite, got {mean}")
    if not (variance > 0.0) or not np.isfinite(variance):
        raise InvalidParameterError(f"variance must be > 0, got {variance}")
    return float(rng.normal(mean, np.sqrt(variance)))


def draw_inverse_gamma(shape: float, rate: float, rng: np.random.Generator) -> float:
    """One draw from the inverse gamma with the given shape and rate.

    The density is proportional to ``x**(-shape-1) * exp(-rate / x)``;
    drawn as the reciprocal of a Gamma(shape, scale=1/rate) variate, so
    the mean is ``rate / (shape - 1)`` for shape > 1.
    """
    if not (shape > 0.0) or not np.isfinite(shape):
        raise InvalidParameterError(f"shape must be > 0, got {shape}")
    if not (rate > 0.0) or not np.isfinite(rate):
        raise InvalidParameterError(f"rate must be > 0, got {rate}")
    return float(1.0 / rng.gamma(shape, 1.0 / rate))


def sample_active_indices(n: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of a uniform size-n subset of range(N).

    Partial Fisher-Yates shuffle over an index array: O(N) memory and n
    swap steps, with the swap offsets taken from a single vectorized
    integer draw so the stream consumption per call is one block.  This
    is the core of :func:`draw_srswor`; the sampler uses it directly in
    hot loops where constructing the full bit vector would dominate.
    """
    n = int(n)
    N = int(N)
    if N < 1:
        raise InvalidParameterError(f"population size must be >= 1, got N={N}")
    if not (1 <= n <= N):
        raise InvalidParameterError(f"subset size must satisfy 1 <= n <= N, got n={n}, N={N}")
    indices = np.arange(N)
    # offsets[i] is uniform on [0, N-i), so position i swaps with i+offsets[i]
    offsets = rng.integers(0, N - np.arange(n))
    for i in range(n):
        j = i + offsets[i]
        indices[i], indices[j] = indices[j], indices[i]
    return np.sort(indices[:n])


def draw_srswor(n: int, N: int, rng: np.random.Generator):
    """Simple random sample without replacement: n active out of N.

    Every size-n subset is equally likely, hence each index has inclusion
    probability n/N.

    Returns
    -------
    SubsetMask
        Mask with ``delta`` of length N and ``active`` the n sampled
        indices in increasing order.
    """
    from .model import SubsetMask

    active = sample_active_indices(n, N, rng)
    delta = np.zeros(int(N), dtype=bool)
    delta[active] = True
    return SubsetMask(delta=delta, active=active)


@dataclass(frozen=True)
class MlbParams:
    """Parameters of the multivariate logit-beta density.

    Attributes
    ----------
    mu : ndarray
        Location vector.
    v_inverse : ndarray
        Lower-triangular precision-like matrix, applied as given (it is
        not inverted); the diagonal must be strictly positive.
    alpha, kappa : ndarray
        Shape vectors with ``kappa > alpha > 0`` elementwise.
    """

    mu: np.ndarray
    v_inverse: np.ndarray
    alpha: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        v_inv = np.atleast_2d(np.asarray(self.v_inverse, dtype=float))
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "v_inverse", v_inv)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "kappa", kappa)
        d = mu.shape[0]
        if v_inv.shape != (d, d):
            raise InvalidParameterError(
                f"v_inverse must be {d}x{d} to match mu, got {v_inv.shape}"
            )
        if alpha.shape != (d,) or kappa.shape != (d,):
            raise InvalidParameterError("alpha and kappa must match mu's length")
        if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(v_inv)):
            raise InvalidParameterError("mu and v_inverse must be finite")
        if np.any(np.triu(v_inv, k=1) != 0.0):
            raise InvalidParameterError("v_inverse must be lower triangular")
        if np.any(np.diag(v_inv) <= 0.0):
            raise InvalidParameterError("v_inverse must have a strictly positive diagonal")
        if np.any(alpha <= 0.0) or np.any(kappa <= alpha):
            raise InvalidParameterError("shape vectors must satisfy kappa > alpha > 0")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def _log1pexp(x: np.ndarray) -> np.ndarray:
    # max(x, 0) + log1p(exp(-|x|)) never overflows and is exact in both tails
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def mlb_log_density(eta: np.ndarray, params: MlbParams) -> float:
    """Log density of the multivariate logit-beta distribution at ``eta``.

    Evaluates

    ``log det(V^-1) + sum_i [lgamma(kappa_i) - lgamma(alpha_i)
    - lgamma(kappa_i - alpha_i)] + alpha' z - kappa' log(1 + exp(z))``

    with ``z = V^-1 (eta - mu)``.  The final term uses the overflow-safe
    ``log(1 + exp(x)) = max(x, 0) + log(1 + exp(-|x|))``, so the result is
    finite for any finite input.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if eta.shape != (params.dim,):
        raise InvalidParameterError(
            f"eta must have length {params.dim}, got shape {eta.shape}"
        )
    if not np.all(np.isfinite(eta)):
        raise InvalidParameterError("eta must be finite")
    z = params.v_inverse @ (eta - params.mu)
    log_det = float(np.sum(np.log(np.diag(params.v_inverse))))
    log_gamma = float(
        np.sum(gammaln(params.kappa) - gammaln(params.alpha) - gammaln(params.kappa - params.alpha))
    )
    return log_det + log_gamma + float(params.alpha @ z) - float(params.kappa @ _log1pexp(z))
