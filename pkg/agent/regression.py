"""
Incremental kernel ridge regression.

The regressor keeps the lower Cholesky factor of ``K + lambda^2 I`` and extends
it by one row per observation, so a new point costs O(n^2) instead of a full
refactorization. Targets can be swapped against the stored factor, which is
what the value-iteration agents do once per episode.

On a finite state-action grid the same point is observed many times. When
the stored points contain repeats, predictions are served from the distinct
points with ridge lambda^2 / count on each, which is the same posterior at
O(u^3) cost in the number u of distinct points.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from agent.errors import InvalidInputError, NumericalDegeneracyError
from agent.kernels import KernelSpec, PointsLike, as_points, cross_gram, gram, kernel_diagonal

logger = logging.getLogger(__name__)

JITTER = 1e-10
NEGATIVE_VARIANCE_TOL = 1e-10
_INITIAL_CAPACITY = 16


@dataclass(frozen=True)
class Prediction:
    mean: float
    stddev: float


def rkhs_norm_bound(f_norm: float, sigma: float, lam: float, information_gain: float,
                    delta: float) -> float:
    """
    Bound on the RKHS norm of a kernel ridge predictor.

    ||mu|| <= ||f|| + (sigma / lambda) * sqrt(2 (Gamma + 1 + log(1/delta)))
    """
    if not 0.0 < delta < 1.0:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if not lam > 0.0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    return f_norm + (sigma / lam) * math.sqrt(2.0 * (information_gain + 1.0 + math.log(1.0 / delta)))


@dataclass(frozen=True)
class _DistinctPoints:
    """Distinct stored points, the observation-to-point map and the factor of K_u + ridge / counts."""
    points: np.ndarray
    inverse: np.ndarray
    counts: np.ndarray
    chol: Optional[np.ndarray]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @classmethod
    def build(cls, spec: KernelSpec, points: np.ndarray, ridge: float) -> "_DistinctPoints":
        distinct, inverse, counts = np.unique(points, axis=0, return_inverse=True,
                                              return_counts=True)
        inverse = inverse.reshape(-1)
        if distinct.shape[0] == points.shape[0]:
            return cls(distinct, inverse, counts, None)
        system = gram(spec, distinct) + np.diag(ridge / counts)
        try:
            factor = cholesky(system, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise NumericalDegeneracyError(
                f"Cholesky failed on {distinct.shape[0]} distinct points: {exc}") from exc
        return cls(distinct, inverse, counts, factor)


def _clamp_variance(var: np.ndarray) -> np.ndarray:
    if var.size and float(var.min()) < -NEGATIVE_VARIANCE_TOL:
        raise NumericalDegeneracyError(
            f"posterior variance {float(var.min()):.3e} below -{NEGATIVE_VARIANCE_TOL}")
    return np.maximum(var, 0.0)


class KernelRidgeRegressor:
    """
    Kernel ridge model over a growing set of observations.

    Args:
        spec: kernel used for every Gram entry
        lam: regularization lambda (the ridge is lambda^2)

    Mutating methods (``observe``, ``fit``, ``refit_targets``) return ``self``
    so calls can be chained; reads never mutate.
    """

    def __init__(self, spec: KernelSpec, lam: float):
        if not lam > 0.0:
            raise InvalidInputError(f"lambda must be positive, got {lam}")
        self.logger = logging.getLogger(__name__)
        self.spec = spec
        self.lam = float(lam)
        self._ridge = self.lam ** 2
        self._n = 0
        self._points = np.zeros((_INITIAL_CAPACITY, spec.dimension))
        self._targets = np.zeros(_INITIAL_CAPACITY)
        self._chol = np.zeros((_INITIAL_CAPACITY, _INITIAL_CAPACITY))
        self._log_det = 0.0
        self._weights: Optional[np.ndarray] = None
        self._groups: Optional[_DistinctPoints] = None

    @classmethod
    def from_observations(cls, spec: KernelSpec, lam: float, points: PointsLike,
                          targets: Sequence[float]) -> "KernelRidgeRegressor":
        return cls(spec, lam).fit(points, targets)

    def __len__(self) -> int:
        return self._n

    @property
    def points(self) -> np.ndarray:
        return self._points[:self._n].copy()

    @property
    def targets(self) -> np.ndarray:
        return self._targets[:self._n].copy()

    @property
    def chol(self) -> np.ndarray:
        return self._chol[:self._n, :self._n].copy()

    @property
    def log_det_accum(self) -> float:
        return self._log_det

    def _ensure_capacity(self, needed: int):
        capacity = self._targets.shape[0]
        if needed <= capacity:
            return
        while capacity < needed:
            capacity *= 2
        points = np.zeros((capacity, self.spec.dimension))
        points[:self._n] = self._points[:self._n]
        targets = np.zeros(capacity)
        targets[:self._n] = self._targets[:self._n]
        chol = np.zeros((capacity, capacity))
        chol[:self._n, :self._n] = self._chol[:self._n, :self._n]
        self._points, self._targets, self._chol = points, targets, chol

    def observe(self, z: PointsLike, y: float) -> "KernelRidgeRegressor":
        """Append one observation with a rank-1 extension of the Cholesky factor."""
        point = as_points(z, self.spec.dimension)
        if point.shape[0] != 1:
            raise InvalidInputError("observe expects a single point")
        prior_var = float(kernel_diagonal(self.spec, point)[0])
        n = self._n
        if n:
            k_vec = cross_gram(self.spec, self._points[:n], point)[:, 0]
            row = solve_triangular(self._chol[:n, :n], k_vec, lower=True, check_finite=False)
            explained = float(row @ row)
        else:
            row = np.zeros(0)
            explained = 0.0
        pivot = prior_var + self._ridge + JITTER - explained
        if not pivot > 0.0 or not math.isfinite(pivot):
            raise NumericalDegeneracyError(f"non-positive Cholesky pivot {pivot:.3e} at n={n}")
        posterior_var = float(_clamp_variance(np.array([prior_var - explained]))[0])

        self._ensure_capacity(n + 1)
        self._points[n] = point[0]
        self._targets[n] = float(y)
        self._chol[n, :n] = row
        self._chol[n, n] = math.sqrt(pivot)
        self._n = n + 1
        self._log_det += math.log1p(posterior_var / self._ridge)
        self._weights = None
        self._groups = None
        return self

    def fit(self, points: PointsLike, targets: Sequence[float]) -> "KernelRidgeRegressor":
        """Replace all observations and refactorize from scratch."""
        points = as_points(points, self.spec.dimension)
        targets = np.asarray(targets, dtype=float).reshape(-1)
        if points.shape[0] != targets.shape[0]:
            raise InvalidInputError(
                f"got {points.shape[0]} points but {targets.shape[0]} targets")
        n = points.shape[0]
        self._n = 0
        self._ensure_capacity(max(n, 1))
        self._chol[:, :] = 0.0
        if n:
            system = gram(self.spec, points) + (self._ridge + JITTER) * np.eye(n)
            try:
                factor = cholesky(system, lower=True, check_finite=False)
            except LinAlgError as exc:
                raise NumericalDegeneracyError(f"Cholesky failed on {n} points: {exc}") from exc
            self._chol[:n, :n] = factor
            self._points[:n] = points
            self._targets[:n] = targets
            self._log_det = float(np.sum(np.log(np.diag(factor) ** 2 / self._ridge)))
        else:
            self._log_det = 0.0
        self._n = n
        self._weights = None
        self._groups = None
        self.logger.debug(f"refactorized regressor with {n} observations")
        return self

    def refit_targets(self, targets: Sequence[float]) -> "KernelRidgeRegressor":
        """Swap in new targets for the stored points; the factor is reused."""
        targets = np.asarray(targets, dtype=float).reshape(-1)
        if targets.shape[0] != self._n:
            raise InvalidInputError(f"expected {self._n} targets, got {targets.shape[0]}")
        self._targets[:self._n] = targets
        self._weights = None
        return self

    def _dual_weights(self) -> np.ndarray:
        if self._weights is None:
            n = self._n
            self._weights = cho_solve((self._chol[:n, :n], True), self._targets[:n],
                                      check_finite=False)
        return self._weights

    def predict_many(self, queries: PointsLike) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior means and standard deviations for a batch of query points."""
        queries = as_points(queries, self.spec.dimension)
        prior_var = kernel_diagonal(self.spec, queries)
        if self._n == 0:
            return np.zeros(queries.shape[0]), np.sqrt(prior_var)
        n = self._n
        groups = self._distinct()
        if groups.size < n:
            k_mat = cross_gram(self.spec, groups.points, queries)
            mean = k_mat.T @ np.bincount(groups.inverse, weights=self._dual_weights(),
                                         minlength=groups.size)
            v = solve_triangular(groups.chol, k_mat, lower=True, check_finite=False)
        else:
            k_mat = cross_gram(self.spec, self._points[:n], queries)
            mean = k_mat.T @ self._dual_weights()
            v = solve_triangular(self._chol[:n, :n], k_mat, lower=True, check_finite=False)
        var = _clamp_variance(prior_var - np.sum(v * v, axis=0))
        stddev = np.minimum(np.sqrt(var), np.sqrt(prior_var))
        return mean, stddev

    def _distinct(self) -> "_DistinctPoints":
        if self._groups is None:
            self._groups = _DistinctPoints.build(self.spec, self._points[:self._n],
                                                 self._ridge + JITTER)
        return self._groups

    def predict(self, z: PointsLike) -> Prediction:
        mean, stddev = self.predict_many(z)
        if mean.shape[0] != 1:
            raise InvalidInputError("predict expects a single point; use predict_many")
        return Prediction(mean=float(mean[0]), stddev=float(stddev[0]))

    def information_gain(self) -> float:
        """1/2 log det(I + K / lambda^2) of the stored points."""
        return 0.5 * self._log_det

    def predictor_norm_bound(self, f_norm: float, sigma_sub_gaussian: float, delta: float) -> float:
        return rkhs_norm_bound(f_norm, sigma_sub_gaussian, self.lam, self.information_gain(), delta)


def dense_posterior(spec: KernelSpec, lam: float, points: PointsLike, targets: Sequence[float],
                    queries: PointsLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    From-scratch posterior with a dense solve of (K + lambda^2 I); the reference
    the incremental regressor is checked against.
    """
    points = as_points(points, spec.dimension)
    queries = as_points(queries, spec.dimension)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    prior_var = kernel_diagonal(spec, queries)
    if points.shape[0] == 0:
        return np.zeros(queries.shape[0]), np.sqrt(prior_var)
    system = gram(spec, points) + lam ** 2 * np.eye(points.shape[0])
    k_mat = cross_gram(spec, points, queries)
    mean = k_mat.T @ np.linalg.solve(system, targets)
    var = prior_var - np.einsum("ij,ij->j", k_mat, np.linalg.solve(system, k_mat))
    return mean, np.sqrt(np.maximum(var, 0.0))


def dense_information_gain(spec: KernelSpec, lam: float, points: PointsLike) -> float:
    points = as_points(points, spec.dimension)
    n = points.shape[0]
    if n == 0:
        return 0.0
    sign, logdet = np.linalg.slogdet(np.eye(n) + gram(spec, points) / lam ** 2)
    if sign <= 0:
        raise NumericalDegeneracyError("I + K / lambda^2 is not positive definite")
    return 0.5 * float(logdet)
