"""
Kernel functions over state-action points in [0,1]^d.

Provides the Matérn and squared-exponential families, a finite-spectrum kernel
whose Mercer eigenvalues are known exactly, and the polynomial-eigendecay
metadata (p, alpha, eta, C_p) consumed by the bound calculators.
"""

import itertools
import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import gamma, kv

from agent.errors import (
    InvalidInputError,
    NotPolynomialEigendecayError,
    UnsupportedKernelError,
)

logger = logging.getLogger(__name__)

PointsLike = Union[np.ndarray, Sequence[Sequence[float]], Sequence[float]]

# Tolerance used by PSD assertions on Gram matrices.
TOL_PSD = 1e-8


class KernelFamily(Enum):
    """Supported kernel families."""
    MATERN = "matern"
    SQUARED_EXPONENTIAL = "squared_exponential"
    FINITE_SPECTRUM = "finite_spectrum"


@dataclass(frozen=True)
class EigendecayProfile:
    """Polynomial eigendecay: sigma_m <= c_p * m^-p * domain_side^alpha."""
    p: float
    alpha: float
    eta: float = 0.0
    c_p: float = 1.0
    domain_side: float = 1.0

    def __post_init__(self):
        if not self.p > 1.0:
            raise InvalidInputError(f"eigendecay exponent p must exceed 1, got {self.p}")
        if not self.alpha > 0.0:
            raise InvalidInputError(f"alpha must be positive, got {self.alpha}")
        if self.eta < 0.0:
            raise InvalidInputError(f"eta must be non-negative, got {self.eta}")
        if not self.c_p > 0.0:
            raise InvalidInputError(f"c_p must be positive, got {self.c_p}")
        if not self.domain_side > 0.0:
            raise InvalidInputError(f"domain_side must be positive, got {self.domain_side}")

    @property
    def p_tilde(self) -> float:
        return self.p * (1.0 - 2.0 * self.eta)

    def eigenvalue_bound(self, m: Union[int, np.ndarray]) -> Union[float, np.ndarray]:
        """Upper bound on the m-th (1-based) Mercer eigenvalue."""
        m = np.asarray(m, dtype=float)
        return self.c_p * m ** (-self.p) * self.domain_side ** self.alpha

    @classmethod
    def for_matern(cls, nu: float, dimension: int, domain_side: float = 1.0) -> "EigendecayProfile":
        return cls(p=(2.0 * nu + dimension) / dimension, alpha=2.0 * nu,
                   domain_side=domain_side)


@dataclass(frozen=True, eq=False)
class _SpectralBasis:
    """Features sqrt(sigma_m) * phi_m(z) with phi_m = sign * cos(omega . z + phase)."""
    eigenvalues: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    signs: np.ndarray

    def features(self, points: np.ndarray) -> np.ndarray:
        angles = points @ self.frequencies.T + self.phases
        return np.sqrt(self.eigenvalues) * self.signs * np.cos(angles)


@dataclass(frozen=True)
class KernelSpec:
    """
    An immutable, unit-variance positive-definite kernel on [0,1]^dimension.

    Use the ``matern``, ``squared_exponential`` and ``finite_spectrum``
    constructors rather than filling the fields by hand.
    """
    family: KernelFamily
    dimension: int
    nu: float = 0.5
    lengthscale: float = 1.0
    profile: Optional[EigendecayProfile] = None
    num_features: int = 1
    feature_seed: int = 0

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InvalidInputError(f"dimension must be a positive integer, got {self.dimension}")
        if not self.nu > 0.0:
            raise InvalidInputError(f"nu must be positive, got {self.nu}")
        if not self.lengthscale > 0.0:
            raise InvalidInputError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.family is KernelFamily.FINITE_SPECTRUM:
            if self.profile is None:
                raise InvalidInputError("finite-spectrum kernel requires an eigendecay profile")
            if self.num_features < 1:
                raise InvalidInputError(f"num_features must be >= 1, got {self.num_features}")

    @classmethod
    def matern(cls, nu: float, lengthscale: float, dimension: int) -> "KernelSpec":
        return cls(KernelFamily.MATERN, dimension, nu=nu, lengthscale=lengthscale)

    @classmethod
    def squared_exponential(cls, lengthscale: float, dimension: int) -> "KernelSpec":
        return cls(KernelFamily.SQUARED_EXPONENTIAL, dimension, lengthscale=lengthscale)

    @classmethod
    def finite_spectrum(cls, profile: EigendecayProfile, num_features: int,
                        feature_seed: int, dimension: int) -> "KernelSpec":
        return cls(KernelFamily.FINITE_SPECTRUM, dimension, profile=profile,
                   num_features=num_features, feature_seed=feature_seed)

    @property
    def is_stationary(self) -> bool:
        return self.family is not KernelFamily.FINITE_SPECTRUM

    @cached_property
    def spectral_basis(self) -> _SpectralBasis:
        if self.family is not KernelFamily.FINITE_SPECTRUM:
            raise UnsupportedKernelError(f"{self.family.value} kernel has no finite spectrum")
        return _build_spectral_basis(self.profile, self.num_features, self.feature_seed, self.dimension)


def _frequency_multi_indices(count: int, dimension: int) -> np.ndarray:
    """Nonzero integer multi-indices, one per +/- pair, in order of growing norm."""
    found = []
    radius = 1
    while len(found) < count:
        shell = []
        for n in itertools.product(range(-radius, radius + 1), repeat=dimension):
            if max(abs(c) for c in n) != radius:
                continue
            first = next(c for c in n if c != 0)
            if first > 0:
                shell.append(n)
        shell.sort(key=lambda n: (sum(abs(c) for c in n), n))
        found.extend(shell)
        radius += 1
    return np.array(found[:count], dtype=float).reshape(count, dimension)


def _build_spectral_basis(profile: EigendecayProfile, num_features: int, seed: int,
                          dimension: int) -> _SpectralBasis:
    # Feature 1 is the constant; afterwards cos/sin pairs share a frequency and an
    # eigenvalue, so the kernel they induce depends on z - z' only.
    num_pairs = num_features // 2
    rng = np.random.default_rng(seed)
    multi = _frequency_multi_indices(num_pairs, dimension)
    pair_phases = rng.uniform(0.0, 2.0 * np.pi, size=num_pairs)
    pair_signs = rng.choice([-1.0, 1.0], size=num_pairs)

    frequencies = np.zeros((num_features, dimension))
    phases = np.zeros(num_features)
    signs = np.ones(num_features)
    index_for_bound = np.ones(num_features)
    for m in range(1, num_features):
        pair = (m - 1) // 2
        frequencies[m] = 2.0 * np.pi * multi[pair]
        phases[m] = pair_phases[pair] - (0.5 * np.pi if (m - 1) % 2 else 0.0)
        signs[m] = pair_signs[pair]
        # both members take the bound of the larger (1-based) index of the pair
        index_for_bound[m] = min(2 * pair + 3, num_features)

    raw = profile.eigenvalue_bound(index_for_bound)
    scale = min(1.0, 1.0 / float(raw.sum()))
    eigenvalues = raw * scale
    logger.debug(f"finite spectrum: {num_features} features, trace {eigenvalues.sum():.6f}")
    return _SpectralBasis(eigenvalues=eigenvalues, frequencies=frequencies,
                          phases=phases, signs=signs)


def as_points(points: PointsLike, dimension: int) -> np.ndarray:
    """Coerce to an (n, dimension) float array; a 1-D input is a single point."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        if arr.size == 0:
            return arr.reshape(0, dimension)
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or (arr.shape[0] > 0 and arr.shape[1] != dimension):
        raise InvalidInputError(
            f"expected points of dimension {dimension}, got array of shape {arr.shape}")
    if arr.shape[0] == 0:
        return arr.reshape(0, dimension)
    return arr


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, np.newaxis, :] - b[np.newaxis, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _matern(r: np.ndarray, nu: float, lengthscale: float) -> np.ndarray:
    scaled = r / lengthscale
    if nu == 0.5:
        return np.exp(-scaled)
    if nu == 1.5:
        s3 = np.sqrt(3.0) * scaled
        return (1.0 + s3) * np.exp(-s3)
    if nu == 2.5:
        s5 = np.sqrt(5.0) * scaled
        return (1.0 + s5 + (5.0 / 3.0) * scaled ** 2) * np.exp(-s5)
    arg = np.sqrt(2.0 * nu) * scaled
    out = np.ones_like(arg)
    positive = arg > 0.0
    a = arg[positive]
    with np.errstate(over="ignore", invalid="ignore"):
        values = (2.0 ** (1.0 - nu) / gamma(nu)) * a ** nu * kv(nu, a)
    out[positive] = np.nan_to_num(values, nan=0.0)
    return np.clip(out, 0.0, 1.0)


def cross_gram(spec: KernelSpec, a: PointsLike, b: PointsLike) -> np.ndarray:
    """Kernel matrix [k(a_i, b_j)] of shape (len(a), len(b))."""
    a = as_points(a, spec.dimension)
    b = as_points(b, spec.dimension)
    if spec.family is KernelFamily.FINITE_SPECTRUM:
        basis = spec.spectral_basis
        return basis.features(a) @ basis.features(b).T
    r = _distances(a, b)
    if spec.family is KernelFamily.MATERN:
        return _matern(r, spec.nu, spec.lengthscale)
    return np.exp(-0.5 * (r / spec.lengthscale) ** 2)


def kernel_diagonal(spec: KernelSpec, points: PointsLike) -> np.ndarray:
    """k(z, z) for each point."""
    points = as_points(points, spec.dimension)
    if spec.is_stationary:
        return np.ones(points.shape[0])
    features = spec.spectral_basis.features(points)
    return np.einsum("ij,ij->i", features, features)


def evaluate(spec: KernelSpec, z: PointsLike, z2: PointsLike) -> float:
    """k(z, z2) for two single points."""
    z = as_points(z, spec.dimension)
    z2 = as_points(z2, spec.dimension)
    if z.shape[0] != 1 or z2.shape[0] != 1:
        raise InvalidInputError("evaluate expects exactly one point on each side")
    if spec.family is KernelFamily.FINITE_SPECTRUM:
        basis = spec.spectral_basis
        return float(np.dot(basis.features(z)[0], basis.features(z2)[0]))
    return float(cross_gram(spec, z, z2)[0, 0])


def gram(spec: KernelSpec, points: PointsLike) -> np.ndarray:
    """Symmetric Gram matrix of a point list; 0x0 for an empty list."""
    points = as_points(points, spec.dimension)
    if points.shape[0] == 0:
        return np.zeros((0, 0))
    K = cross_gram(spec, points, points)
    return 0.5 * (K + K.T)


def eigendecay_profile(spec: KernelSpec, domain_side: float = 1.0) -> EigendecayProfile:
    """
    Polynomial eigendecay metadata of a kernel on a hypercube of side ``domain_side``.

    Raises:
        NotPolynomialEigendecayError: for the squared-exponential family.
    """
    if not domain_side > 0.0:
        raise InvalidInputError(f"domain_side must be positive, got {domain_side}")
    if spec.family is KernelFamily.MATERN:
        return EigendecayProfile.for_matern(spec.nu, spec.dimension, domain_side)
    if spec.family is KernelFamily.FINITE_SPECTRUM:
        if spec.profile.domain_side == domain_side:
            return spec.profile
        return replace(spec.profile, domain_side=domain_side)
    raise NotPolynomialEigendecayError(
        f"{spec.family.value} kernel decays exponentially, not polynomially")


def finite_spectrum_features(spec: KernelSpec, z: PointsLike) -> np.ndarray:
    """
    Scaled features [sqrt(sigma_m) * phi_m(z)] of a finite-spectrum kernel.

    Returns a vector of length ``num_features`` for a single point and an
    (n, num_features) matrix for several. Inner products reproduce ``evaluate``.
    """
    if spec.family is not KernelFamily.FINITE_SPECTRUM:
        raise UnsupportedKernelError(f"{spec.family.value} kernel has no finite feature map")
    single = np.asarray(z, dtype=float).ndim == 1
    features = spec.spectral_basis.features(as_points(z, spec.dimension))
    return features[0] if single else features


def configured_eigenvalues(spec: KernelSpec) -> np.ndarray:
    """Mercer eigenvalues of a finite-spectrum kernel, in non-increasing order."""
    return spec.spectral_basis.eigenvalues.copy()
