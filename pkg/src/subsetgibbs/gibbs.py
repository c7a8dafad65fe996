"""Composite Gibbs sampler over a freshly resampled data subset.

Each sweep draws a new without-replacement subset of size n, then updates
every block from its conjugate full conditional given that subset:

    1. delta  ~ SRSWOR(n, N)                       (uses no data values)
    2. eta restricted to the subset: multivariate normal, sampled through
       a Cholesky factor of the precision matrix
    3. xi restricted to the subset: independent normals
    4. beta: p-dimensional normal
    5. the four variances: inverse gamma
    6. prediction-set components outside the subset: prior refresh or
       carry-over, per SamplerConfig.prediction_refresh
    7. per-index predictions over the prediction set, accumulated after
       burn-in

Variance lags follow the update order exactly: steps 2-4 condition on the
previous sweep's variances, and step 6's prior refresh also uses the
previous sweep's variances even though step 5 has already produced new
ones.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .distributions import make_rng, sample_active_indices
from .errors import InvalidParameterError, NumericalError
from .model import (
    REFRESH_PRIOR,
    ChainState,
    DatasetView,
    FixedVariances,
    SamplerConfig,
    SubsetMask,
    _predict_from_design,
    kernel_matrix,
)

# subsets are enumerable below this count, so their designs are memoized
_DESIGN_CACHE_LIMIT = 64

__all__ = [
    "Clock",
    "ChainOutput",
    "update_eta_active",
    "update_xi_active",
    "update_beta",
    "update_variances",
    "draw_inactive_prediction_components",
    "run_chain",
]


@dataclass(frozen=True)
class Clock:
    """Injectable time source; the default reads the process clocks."""

    wall: Callable[[], float] = time.perf_counter
    cpu: Callable[[], float] = time.process_time


@dataclass
class ChainOutput:
    """Result of one chain: predictions, timings and bookkeeping.

    ``mu_hat`` is the running mean of the per-sweep predictions over the
    kept iterations and ``mu_var`` the matching sample variance (NaN when
    only one sweep is kept).  ``trace``, when requested, holds one row per
    sweep: beta components followed by the four variances.
    """

    mu_hat: np.ndarray
    mu_var: np.ndarray
    prediction_indices: np.ndarray
    elapsed_cpu_seconds: float
    elapsed_wall_seconds: float
    n_used: int
    iterations_kept: int
    jitter_events: int = 0
    trace: Optional[np.ndarray] = None


def _cholesky_with_jitter(precision: np.ndarray, *, n: int, iteration: Optional[int]):
    """Lower Cholesky factor, adding 1e-10 * trace/dim jitter on failure.

    Returns (lower, jitter_events); raises NumericalError when two
    escalating jitters still leave the matrix numerically indefinite.
    """
    dim = precision.shape[0]
    jitter_events = 0
    jitter = 1e-10 * np.trace(precision) / dim
    attempt = precision
    for _ in range(3):
        try:
            return np.linalg.cholesky(attempt), jitter_events
        except np.linalg.LinAlgError:
            jitter_events += 1
            attempt = attempt + jitter * np.eye(dim)
            jitter *= 10.0
    raise NumericalError(
        "precision matrix not positive definite after jitter",
        n=n, iteration=iteration,
    )


def _sample_mvn_precision(precision: Optional[np.ndarray], linear: np.ndarray,
                          rng: np.random.Generator, *, n: int, iteration: Optional[int],
                          chol: Optional[np.ndarray] = None):
    """Draw from N(P^-1 h, P^-1) given precision P and linear term h.

    A precomputed lower Cholesky factor of P short-circuits the
    factorization (the sampler caches factors when the conditioning
    variances are pinned, which leaves P constant per subset).
    Returns (draw, mean, jitter_events).
    """
    jitter_events = 0
    if chol is None:
        chol, jitter_events = _cholesky_with_jitter(precision, n=n, iteration=iteration)
    mean = scipy.linalg.cho_solve((chol, True), linear, check_finite=False)
    z = rng.standard_normal(chol.shape[0])
    draw = mean + scipy.linalg.solve_triangular(chol, z, lower=True, trans="T",
                                                check_finite=False)
    return draw, mean, jitter_events


def update_eta_active(state: ChainState, y_delta: np.ndarray, x_delta: np.ndarray,
                      psi_delta: np.ndarray, xi_delta: np.ndarray,
                      rng: np.random.Generator, *, iteration: Optional[int] = None,
                      jitter_counter: Optional[list] = None,
                      gram: Optional[np.ndarray] = None,
                      chol: Optional[np.ndarray] = None) -> np.ndarray:
    """Draw the subset's basis coefficients from their full conditional.

    The conditional is normal with covariance
    ``((1/sigma2) Psi'Psi + (1/sigma2_eta) I)^-1`` and mean
    ``(Psi'Psi + (sigma2/sigma2_eta) I)^-1 Psi'(y - X beta - xi)``.
    ``gram`` (Psi'Psi) and ``chol`` (lower factor of the precision) may be
    supplied when the caller has them cached.
    """
    n = y_delta.shape[0]
    if chol is None:
        if gram is None:
            gram = psi_delta.T @ psi_delta
        precision = gram / state.sigma2 + np.eye(n) / state.sigma2_eta
    else:
        precision = None
    residual = y_delta - x_delta @ state.beta - xi_delta
    linear = psi_delta.T @ residual / state.sigma2
    draw, _, jitter = _sample_mvn_precision(precision, linear, rng, n=n,
                                            iteration=iteration, chol=chol)
    if jitter_counter is not None:
        jitter_counter.append(jitter)
    return draw


def update_xi_active(state: ChainState, y_delta: np.ndarray, x_delta: np.ndarray,
                     psi_delta: np.ndarray, eta_delta: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw the subset's fine-scale effects: independent normals.

    Mean ``(s_xi / (s + s_xi)) * (y - X beta - Psi eta)`` and common
    variance ``s * s_xi / (s + s_xi)`` with s = sigma2, s_xi = sigma2_xi.
    """
    shrink = state.sigma2_xi / (state.sigma2 + state.sigma2_xi)
    mean = shrink * (y_delta - x_delta @ state.beta - psi_delta @ eta_delta)
    variance = state.sigma2 * state.sigma2_xi / (state.sigma2 + state.sigma2_xi)
    return mean + np.sqrt(variance) * rng.standard_normal(mean.shape[0])


def update_beta(state: ChainState, y_delta: np.ndarray, x_delta: np.ndarray,
                psi_delta: np.ndarray, eta_delta: np.ndarray, xi_delta: np.ndarray,
                rng: np.random.Generator, *, iteration: Optional[int] = None,
                jitter_counter: Optional[list] = None,
                xtx: Optional[np.ndarray] = None,
                chol: Optional[np.ndarray] = None) -> np.ndarray:
    """Draw the regression coefficients from their full conditional.

    Normal with covariance ``((1/sigma2) X'X + (1/sigma2_beta) I_p)^-1``
    and mean ``(X'X + (sigma2/sigma2_beta) I_p)^-1 X'(y - Psi eta - xi)``.
    ``xtx`` (X'X) and ``chol`` may be supplied when cached.
    """
    p = x_delta.shape[1]
    if chol is None:
        if xtx is None:
            xtx = x_delta.T @ x_delta
        precision = xtx / state.sigma2 + np.eye(p) / state.sigma2_beta
    else:
        precision = None
    residual = y_delta - psi_delta @ eta_delta - xi_delta
    linear = x_delta.T @ residual / state.sigma2
    draw, _, jitter = _sample_mvn_precision(precision, linear, rng,
                                            n=y_delta.shape[0], iteration=iteration,
                                            chol=chol)
    if jitter_counter is not None:
        jitter_counter.append(jitter)
    return draw


def update_variances(state: ChainState, residual: Optional[np.ndarray], eta_delta: np.ndarray,
                     xi_delta: np.ndarray, beta: np.ndarray, rng: np.random.Generator,
                     *, ig_shape: float = 1.0, ig_rate: float = 1.0,
                     fixed: Optional[FixedVariances] = None):
    """Draw the four variance components from their inverse-gamma conditionals.

    With prior IG(a, b) on each component the conditionals are

        sigma2      ~ IG(a + n/2, b + ||residual||^2 / 2)
        sigma2_eta  ~ IG(a + n/2, b + eta'eta / 2)
        sigma2_xi   ~ IG(a + n/2, b + xi'xi / 2)
        sigma2_beta ~ IG(a + p/2, b + beta'beta / 2)

    where ``residual = y - X beta - Psi eta - xi`` on the subset.  A
    component pinned in ``fixed`` is returned unchanged and consumes no
    randomness; ``residual`` may be None when sigma2 is pinned.
    """
    fixed = fixed or FixedVariances()
    n = eta_delta.shape[0]
    p = beta.shape[0]

    def _draw(fixed_value: Optional[float], half_df: float, vector: Optional[np.ndarray]) -> float:
        if fixed_value is not None:
            return fixed_value
        if vector is None:
            raise InvalidParameterError("residual is required when sigma2 is not fixed")
        half_ss = 0.5 * float(vector @ vector)
        return 1.0 / rng.gamma(ig_shape + half_df, 1.0 / (ig_rate + half_ss))

    sigma2 = _draw(fixed.sigma2, n / 2.0, residual)
    sigma2_eta = _draw(fixed.sigma2_eta, n / 2.0, eta_delta)
    sigma2_xi = _draw(fixed.sigma2_xi, n / 2.0, xi_delta)
    sigma2_beta = _draw(fixed.sigma2_beta, p / 2.0, beta)
    return sigma2, sigma2_eta, sigma2_xi, sigma2_beta


def draw_inactive_prediction_components(state: ChainState, prediction_set: np.ndarray,
                                        mask: SubsetMask, rng: np.random.Generator,
                                        *, sigma2_eta: Optional[float] = None,
                                        sigma2_xi: Optional[float] = None):
    """Prior draws of (eta_i, xi_i) for prediction indices outside the subset.

    Both vectors are independent normals with mean zero; the variances
    default to the ones in ``state`` but the chain passes the previous
    sweep's values explicitly, honoring the update-order lag.  Indices
    already in the subset are untouched.  Returns the refreshed index set
    with the two draws (empty arrays when the subset covers the set).
    """
    s_eta = state.sigma2_eta if sigma2_eta is None else sigma2_eta
    s_xi = state.sigma2_xi if sigma2_xi is None else sigma2_xi
    if s_eta <= 0.0 or s_xi <= 0.0:
        raise InvalidParameterError("variances must be strictly positive")
    outside = prediction_set[~mask.delta[prediction_set]]
    if outside.size == 0:
        return outside, np.empty(0), np.empty(0)
    eta_draw = np.sqrt(s_eta) * rng.standard_normal(outside.size)
    xi_draw = np.sqrt(s_xi) * rng.standard_normal(outside.size)
    return outside, eta_draw, xi_draw


def run_chain(data: DatasetView, config: SamplerConfig, n: int,
              *, collect_trace: bool = False, clock: Optional[Clock] = None) -> ChainOutput:
    """Run one chain of the subset-resampling sampler.

    Parameters
    ----------
    data : DatasetView
    config : SamplerConfig
    n : int
        Subset size, 1 <= n <= N.  n = N recovers the ordinary
        full-data sampler (the subset draw then always returns the full
        index set).
    collect_trace : bool
        Record (beta, sigma2, sigma2_eta, sigma2_xi, sigma2_beta) per
        sweep for trace export and diagnostics.
    clock : Clock, optional
        Injectable time source for the recorded wall/CPU durations.

    Returns
    -------
    ChainOutput

    Raises
    ------
    NumericalError
        If a precision Cholesky fails even after jitter; the failing
        sweep index and n are attached.
    """
    n = int(n)
    N = data.n_obs
    if not (1 <= n <= N):
        raise InvalidParameterError(f"subset size must satisfy 1 <= n <= N, got n={n}, N={N}")
    pred = config.prediction_set
    if pred[-1] >= N:
        raise InvalidParameterError("prediction_set contains indices beyond the dataset")
    clock = clock or Clock()
    wall_start = clock.wall()
    cpu_start = clock.cpu()

    rng = make_rng(config.seed)
    fixed = config.fixed_variances
    state = ChainState.initial(N, data.n_covariates, fixed)
    state.validate()
    refresh_prior = config.prediction_refresh == REFRESH_PRIOR

    # prediction design is fixed across sweeps
    pred_coords = data.index_coords[pred]
    psi_pred = kernel_matrix(pred_coords, pred_coords, config.basis)
    x_pred = data.x[pred]

    m = pred.size
    kept = 0
    mu_mean = np.zeros(m)
    mu_m2 = np.zeros(m)
    jitter_log: list = []
    trace = np.empty((config.iterations, data.n_covariates + 4)) if collect_trace else None

    # With an enumerable mask space the per-subset designs are reused
    # across sweeps; when the conditioning variances are pinned the
    # precision factors are constant per subset too, so they join the
    # cache.  Cache hits are arithmetically identical to recomputation.
    cache_designs = math.comb(N, n) <= _DESIGN_CACHE_LIMIT
    fully_fixed = fixed is not None and None not in (
        fixed.sigma2, fixed.sigma2_eta, fixed.sigma2_xi, fixed.sigma2_beta)
    sigma2_free = fixed is None or fixed.sigma2 is None
    design_cache: dict = {}

    for g in range(1, config.iterations + 1):
        try:
            active = sample_active_indices(n, N, rng)
            key = active.tobytes() if cache_designs else None
            cached = design_cache.get(key) if cache_designs else None
            if cached is None:
                coords = data.index_coords[active]
                x_delta = data.x[active]
                psi_delta = kernel_matrix(coords, coords, config.basis)
                gram = psi_delta.T @ psi_delta
                xtx = x_delta.T @ x_delta
                chol_eta = chol_beta = None
                if fully_fixed:
                    prec_eta = gram / state.sigma2 + np.eye(n) / state.sigma2_eta
                    chol_eta, jit_e = _cholesky_with_jitter(prec_eta, n=n, iteration=g)
                    prec_beta = xtx / state.sigma2 + np.eye(x_delta.shape[1]) / state.sigma2_beta
                    chol_beta, jit_b = _cholesky_with_jitter(prec_beta, n=n, iteration=g)
                    jitter_log.append(jit_e + jit_b)
                cached = (x_delta, psi_delta, gram, xtx, chol_eta, chol_beta)
                if cache_designs:
                    design_cache[key] = cached
            x_delta, psi_delta, gram, xtx, chol_eta, chol_beta = cached
            y_delta = data.y[active]

            prev_sigma2_eta = state.sigma2_eta
            prev_sigma2_xi = state.sigma2_xi

            eta_delta = update_eta_active(state, y_delta, x_delta, psi_delta,
                                          state.xi[active], rng, iteration=g,
                                          jitter_counter=jitter_log,
                                          gram=gram, chol=chol_eta)
            state.eta[active] = eta_delta

            xi_delta = update_xi_active(state, y_delta, x_delta, psi_delta, eta_delta, rng)
            state.xi[active] = xi_delta

            beta = update_beta(state, y_delta, x_delta, psi_delta, eta_delta, xi_delta,
                               rng, iteration=g, jitter_counter=jitter_log,
                               xtx=xtx, chol=chol_beta)
            state.beta = beta

            residual = None
            if sigma2_free:
                residual = y_delta - x_delta @ beta - psi_delta @ eta_delta - xi_delta
            (state.sigma2, state.sigma2_eta,
             state.sigma2_xi, state.sigma2_beta) = update_variances(
                state, residual, eta_delta, xi_delta, beta, rng,
                ig_shape=config.ig_shape, ig_rate=config.ig_rate, fixed=fixed,
            )

            if refresh_prior:
                outside = pred[~np.isin(pred, active, assume_unique=True)]
                if outside.size:
                    state.eta[outside] = np.sqrt(prev_sigma2_eta) * rng.standard_normal(outside.size)
                    state.xi[outside] = np.sqrt(prev_sigma2_xi) * rng.standard_normal(outside.size)

            mu_g = _predict_from_design(x_pred, psi_pred, pred, state)
        except NumericalError:
            raise
        except np.linalg.LinAlgError as exc:  # pragma: no cover - safety net
            raise NumericalError(str(exc), n=n, iteration=g) from exc

        if collect_trace:
            trace[g - 1, :-4] = state.beta
            trace[g - 1, -4:] = (state.sigma2, state.sigma2_eta,
                                 state.sigma2_xi, state.sigma2_beta)

        if g > config.burn_in:
            kept += 1
            delta_mu = mu_g - mu_mean
            mu_mean += delta_mu / kept
            mu_m2 += delta_mu * (mu_g - mu_mean)

    mu_var = mu_m2 / (kept - 1) if kept > 1 else np.full(m, np.nan)
    return ChainOutput(
        mu_hat=mu_mean,
        mu_var=mu_var,
        prediction_indices=pred.copy(),
        elapsed_cpu_seconds=clock.cpu() - cpu_start,
        elapsed_wall_seconds=clock.wall() - wall_start,
        n_used=n,
        iterations_kept=kept,
        jitter_events=int(sum(jitter_log)),
        trace=trace,
    )
