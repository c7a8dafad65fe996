"""Domain types for the hierarchical regression and its basis expansion.

The observation model for an active index i is

    Y_i = x_i' beta + sum_j K(c_i, c_j) eta_j + xi_i + eps_i

where K is an exponential kernel over the row coordinates and the sum
ranges over whichever index set is in play (the current subset for the
likelihood, the prediction set for prediction).  This module owns the
value types, the kernel, and construction of the per-subset design
matrices; the sampler itself lives in ``gibbs``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "DatasetView",
    "BasisConfig",
    "SubsetMask",
    "ChainState",
    "FixedVariances",
    "SamplerConfig",
    "kernel_matrix",
    "build_subset_design",
    "predict_mu",
    "METRIC_ABS",
    "METRIC_GREAT_CIRCLE",
]

METRIC_ABS = "abs"
METRIC_GREAT_CIRCLE = "greatcircle"

# Prediction-set components outside the current subset: redraw from the
# prior each iteration, or hold the last value (see SamplerConfig).
REFRESH_PRIOR = "prior"
REFRESH_CARRY = "carry"


@dataclass(frozen=True)
class DatasetView:
    """The N observations with their covariates and locations.

    Attributes
    ----------
    y : ndarray, shape (N,)
        Observations.
    x : ndarray, shape (N, p)
        Covariate rows.
    index_coords : ndarray, shape (N,) or (N, 2)
        Locations fed to the basis kernel.  A flat vector is a scalar
        coordinate (e.g. a time index); two columns are (lat, lon) in
        degrees for the great-circle metric.
    """

    y: np.ndarray
    x: np.ndarray
    index_coords: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        coords = np.asarray(self.index_coords, dtype=float)
        if y.ndim != 1 or y.size < 1:
            raise InvalidParameterError("y must be a nonempty 1-d vector")
        n = y.shape[0]
        if x.ndim != 2 or x.shape[0] != n or x.shape[1] < 1:
            raise InvalidParameterError(f"x must be (N, p) with N={n} and p >= 1, got {x.shape}")
        if coords.shape != (n,) and coords.shape != (n, 2):
            raise InvalidParameterError(
                f"index_coords must have shape ({n},) or ({n}, 2), got {coords.shape}"
            )
        for name, arr in (("y", y), ("x", x), ("index_coords", coords)):
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"{name} contains non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "index_coords", coords)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class BasisConfig:
    """Exponential kernel exp(-rho * d) with a configurable metric."""

    rho: float
    metric: str = METRIC_ABS

    def __post_init__(self):
        if not (self.rho > 0.0) or not np.isfinite(self.rho):
            raise InvalidParameterError(f"rho must be > 0, got {self.rho}")
        if self.metric not in (METRIC_ABS, METRIC_GREAT_CIRCLE):
            raise InvalidParameterError(
                f"metric must be '{METRIC_ABS}' or '{METRIC_GREAT_CIRCLE}', got {self.metric!r}"
            )


@dataclass(frozen=True)
class SubsetMask:
    """Inclusion indicators with the active index list kept alongside.

    ``active`` is redundant with ``delta`` but the sampler touches it in
    every step, so both representations are maintained and checked
    against each other.
    """

    delta: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=bool)
        active = np.asarray(self.active, dtype=np.int64)
        if delta.ndim != 1:
            raise InvalidParameterError("delta must be a 1-d bit vector")
        if active.ndim != 1 or active.size < 1:
            raise InvalidParameterError("active must be a nonempty 1-d index list")
        if np.any(np.diff(active) <= 0):
            raise InvalidParameterError("active indices must be strictly increasing")
        if active[0] < 0 or active[-1] >= delta.shape[0]:
            raise InvalidParameterError("active indices out of range")
        if int(delta.sum()) != active.size or not np.all(delta[active]):
            raise InvalidParameterError("delta and active disagree")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "active", active)

    @property
    def n_active(self) -> int:
        return self.active.size

    @property
    def size(self) -> int:
        return self.delta.shape[0]


@dataclass
class ChainState:
    """Current values of the sampled quantities for one chain.

    Mutable by design: exactly one chain owns a state instance and
    updates it in place between iterations.
    """

    beta: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    sigma2: float
    sigma2_eta: float
    sigma2_xi: float
    sigma2_beta: float

    def validate(self):
        for name in ("sigma2", "sigma2_eta", "sigma2_xi", "sigma2_beta"):
            value = getattr(self, name)
            if not (value > 0.0) or not np.isfinite(value):
                raise InvalidParameterError(f"{name} must be strictly positive, got {value}")
        for name in ("beta", "eta", "xi"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidParameterError(f"{name} contains non-finite entries")

    @staticmethod
    def initial(n_obs: int, n_covariates: int, fixed: Optional["FixedVariances"] = None) -> "ChainState":
        """Neutral starting point: zero effects, unit variances.

        Fixed variance overrides, when present, take effect immediately
        so the first iteration already conditions on them.
        """
        fixed = fixed or FixedVariances()
        return ChainState(
            beta=np.zeros(n_covariates),
            eta=np.zeros(n_obs),
            xi=np.zeros(n_obs),
            sigma2=fixed.sigma2 if fixed.sigma2 is not None else 1.0,
            sigma2_eta=fixed.sigma2_eta if fixed.sigma2_eta is not None else 1.0,
            sigma2_xi=fixed.sigma2_xi if fixed.sigma2_xi is not None else 1.0,
            sigma2_beta=fixed.sigma2_beta if fixed.sigma2_beta is not None else 1.0,
        )


@dataclass(frozen=True)
class FixedVariances:
    """Optional per-component variance pins (None means sample normally).

    Used by the verification oracles, which need the conditionally
    Gaussian sub-model with known variances.
    """

    sigma2: Optional[float] = None
    sigma2_eta: Optional[float] = None
    sigma2_xi: Optional[float] = None
    sigma2_beta: Optional[float] = None

    def __post_init__(self):
        for name in ("sigma2", "sigma2_eta", "sigma2_xi", "sigma2_beta"):
            value = getattr(self, name)
            if value is not None and (not np.isfinite(value) or value <= 0.0):
                raise InvalidParameterError(f"fixed {name} must be strictly positive, got {value}")

    @staticmethod
    def all_of(sigma2: float, sigma2_eta: float, sigma2_xi: float, sigma2_beta: float) -> "FixedVariances":
        return FixedVariances(sigma2, sigma2_eta, sigma2_xi, sigma2_beta)


@dataclass(frozen=True)
class SamplerConfig:
    """Priors, iteration counts, prediction set and seed for one fit.

    Attributes
    ----------
    iterations : int
        Total sweeps G.
    burn_in : int
        Discarded sweeps g0; must satisfy 0 <= g0 < G.
    prediction_set : ndarray
        Sorted 0-based indices where predictions are accumulated.
    ig_shape, ig_rate : float
        Inverse-gamma prior (shape, rate) shared by all variance
        components; the full conditionals add n/2 (or p/2) to the shape
        and the relevant half sum of squares to the rate.
    prediction_refresh : str
        Policy for prediction-set components outside the current subset:
        ``"prior"`` redraws them from their prior every iteration;
        ``"carry"`` holds the last sampled value.  See README for the
        tradeoff.
    """

    iterations: int
    burn_in: int
    prediction_set: np.ndarray
    basis: BasisConfig
    seed: int
    ig_shape: float = 1.0
    ig_rate: float = 1.0
    fixed_variances: Optional[FixedVariances] = None
    prediction_refresh: str = REFRESH_CARRY

    def __post_init__(self):
        object.__setattr__(
            self, "prediction_set", np.asarray(self.prediction_set, dtype=np.int64)
        )
        if self.iterations < 1 or not (0 <= self.burn_in < self.iterations):
            raise InvalidParameterError(
                f"need 0 <= burn_in < iterations, got burn_in={self.burn_in}, "
                f"iterations={self.iterations}"
            )
        a = self.prediction_set
        if a.ndim != 1 or a.size < 1:
            raise InvalidParameterError("prediction_set must be a nonempty 1-d index list")
        if np.any(np.diff(a) <= 0) or a[0] < 0:
            raise InvalidParameterError("prediction_set must be sorted, unique and nonnegative")
        if self.prediction_refresh not in (REFRESH_PRIOR, REFRESH_CARRY):
            raise InvalidParameterError(
                f"prediction_refresh must be '{REFRESH_PRIOR}' or '{REFRESH_CARRY}', "
                f"got {self.prediction_refresh!r}"
            )
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidParameterError("seed must be a 64-bit unsigned integer")
        for name in ("ig_shape", "ig_rate"):
            value = getattr(self, name)
            if not (value > 0.0) or not np.isfinite(value):
                raise InvalidParameterError(f"{name} must be > 0, got {value}")

    @property
    def kept_iterations(self) -> int:
        return self.iterations - self.burn_in


def _pairwise_distance(coords_a: np.ndarray, coords_b: np.ndarray, metric: str) -> np.ndarray:
    if metric == METRIC_ABS:
        if coords_a.ndim != 1 or coords_b.ndim != 1:
            raise InvalidParameterError("absolute-difference metric needs scalar coordinates")
        return np.abs(coords_a[:, None] - coords_b[None, :])
    if coords_a.ndim == 1:
        # scalar coordinates on a circle, in radians: arc distance
        diff = np.abs(coords_a[:, None] - coords_b[None, :]) % (2.0 * np.pi)
        return np.minimum(diff, 2.0 * np.pi - diff)
    # (lat, lon) in degrees: central angle on the unit sphere via haversine
    lat_a, lon_a = np.radians(coords_a[:, 0])[:, None], np.radians(coords_a[:, 1])[:, None]
    lat_b, lon_b = np.radians(coords_b[:, 0])[None, :], np.radians(coords_b[:, 1])[None, :]
    h = (
        np.sin(0.5 * (lat_a - lat_b)) ** 2
        + np.cos(lat_a) * np.cos(lat_b) * np.sin(0.5 * (lon_a - lon_b)) ** 2
    )
    return 2.0 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def kernel_matrix(coords_a: np.ndarray, coords_b: np.ndarray, basis: BasisConfig) -> np.ndarray:
    """exp(-rho * d(a, b)) for every coordinate pair."""
    coords_a = np.asarray(coords_a, dtype=float)
    coords_b = np.asarray(coords_b, dtype=float)
    return np.exp(-basis.rho * _pairwise_distance(coords_a, coords_b, basis.metric))


def build_subset_design(data: DatasetView, basis: BasisConfig, mask: SubsetMask):
    """Design matrices restricted to the active indices.

    Returns
    -------
    (X_delta, Psi_delta)
        ``X_delta`` is n x p (covariate rows of the active indices) and
        ``Psi_delta`` is the n x n kernel matrix over active coordinates:
        the full-rank expansion of the sampled sub-vector.  ``Psi_delta``
        is symmetric with unit diagonal.
    """
    if mask.size != data.n_obs:
        raise InvalidParameterError(
            f"mask length {mask.size} does not match data length {data.n_obs}"
        )
    active = mask.active
    x_delta = data.x[active]
    coords = data.index_coords[active]
    psi_delta = kernel_matrix(coords, coords, basis)
    return x_delta, psi_delta


def _predict_from_design(x_pred: np.ndarray, psi_pred: np.ndarray,
                         pred_indices: np.ndarray, state: ChainState) -> np.ndarray:
    # shared by predict_mu and the chain's precomputed fast path so both
    # produce bit-identical arithmetic
    return x_pred @ state.beta + psi_pred @ state.eta[pred_indices] + state.xi[pred_indices]


def predict_mu(state: ChainState, data: DatasetView, basis: BasisConfig,
               prediction_set: Sequence[int]) -> np.ndarray:
    """Per-index prediction over the prediction set.

    For each i in the set: ``x_i' beta + sum_{j in set} K(c_i, c_j) eta_j
    + xi_i``; components of eta outside the set are masked out, matching
    the sampler's prediction rule.
    """
    pred = np.asarray(prediction_set, dtype=np.int64)
    if pred.ndim != 1 or pred.size < 1:
        raise InvalidParameterError("prediction_set must be a nonempty 1-d index list")
    if pred[0] < 0 or pred[-1] >= data.n_obs or np.any(np.diff(pred) <= 0):
        raise InvalidParameterError("prediction_set must be sorted, unique and in range")
    coords = data.index_coords[pred]
    psi_pred = kernel_matrix(coords, coords, basis)
    return _predict_from_design(data.x[pred], psi_pred, pred, state)
