"""
Analytic complexity bounds for optimistic kernel value iteration.

Every hidden big-O constant is an explicit field of ``BoundConstants`` (all
default to 1) so reported numbers can be reproduced. All functions here are
pure: identical inputs give bit-identical outputs.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, Optional

import numpy as np
import pandas as pd

from agent.errors import (
    DegenerateInputError,
    InvalidInputError,
    InvalidProfileError,
    NoFixedPointError,
)
from agent.kernels import EigendecayProfile
from agent.regression import rkhs_norm_bound

logger = logging.getLogger(__name__)

BETA_MAX_ITERATIONS = 200
BETA_RELATIVE_TOL = 1e-9
UNCERTAINTY_WARN_P_TILDE = 3.0


@dataclass(frozen=True)
class BoundConstants:
    """Constants of the covering, cover-size and regret bounds."""
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    c5: float = 1.0
    c6: float = 1.0
    c_regret: float = 1.0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class BoundParams:
    """
    Inputs shared by the bound calculators.

    ``c1`` is the uniform bound on the scaled eigenfunctions and ``rho`` the
    side of the domain the bounds refer to (it takes precedence over
    ``profile.domain_side``).
    """
    profile: EigendecayProfile
    lam: float = 1.0
    c1: float = 1.0
    rho: float = 1.0
    horizon: int = 1
    num_episodes: int = 1
    delta: float = 0.1
    dimension: Optional[int] = None
    nu: Optional[float] = None
    constants: BoundConstants = field(default_factory=BoundConstants)

    def __post_init__(self):
        if not self.lam > 0.0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.rho > 0.0:
            raise InvalidInputError(f"rho must be positive, got {self.rho}")
        if self.horizon < 1 or self.num_episodes < 1:
            raise InvalidInputError("horizon and num_episodes must be >= 1")
        if self.c1 <= 0.0:
            raise InvalidInputError(f"c1 must be positive, got {self.c1}")


@dataclass(frozen=True)
class CoveringBound:
    """Log covering number with its additive parts."""
    total: float
    parts: Dict[str, float]


@dataclass(frozen=True)
class RegretBound:
    value: float
    exponent: float
    matern_exponent: Optional[float] = None


def _p_tilde(profile: EigendecayProfile) -> float:
    p = profile.p_tilde
    if not p > 1.0:
        raise InvalidProfileError(f"p_tilde = {p} must exceed 1 for the bounds to hold")
    return p


def _rho(params: BoundParams, rho: Optional[float]) -> float:
    rho = params.rho if rho is None else rho
    if not rho > 0.0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    return rho


def info_gain_bound_curve(params: BoundParams, t_max: int, rho: Optional[float] = None) -> np.ndarray:
    """
    Information-gain bound for t = 1..t_max (entry t - 1).

    Gamma(t) <= D/2 log(1 + t / (lambda^2 D)) + t eps_D / (2 lambda^2), with the
    tail eps_D = C1^2 C_p rho^alpha / (p~ - 1) D^(1 - p~) and
    D = ceil(C t^(1/p~) (log t)^(-1/p~)). The curve is the running maximum,
    which is still a bound at every t and is non-decreasing.
    """
    if t_max < 1:
        raise InvalidInputError(f"t must be >= 1, got {t_max}")
    p = _p_tilde(params.profile)
    rho = _rho(params, rho)
    lam2 = params.lam ** 2
    mass = params.c1 ** 2 * params.profile.c_p * rho ** params.profile.alpha
    scale = (mass / ((p - 1.0) * lam2)) ** (1.0 / p)

    t = np.arange(1, t_max + 1, dtype=float)
    log_t = np.maximum(np.log(t), 1.0)
    D = np.maximum(1.0, np.ceil(scale * t ** (1.0 / p) * log_t ** (-1.0 / p)))
    tail = mass / (p - 1.0) * D ** (1.0 - p)
    raw = 0.5 * D * np.log1p(t / (lam2 * D)) + t * tail / (2.0 * lam2)
    return np.maximum.accumulate(raw)


def info_gain_bound(params: BoundParams, t: int, rho: Optional[float] = None) -> float:
    return float(info_gain_bound_curve(params, int(t), rho)[-1])


def rkhs_covering_bound(params: BoundParams, R: float, eps: float,
                        rho: Optional[float] = None) -> float:
    """
    Log covering number of the radius-R RKHS ball in sup norm:
    C2 C3 (R^2 rho^alpha / eps^2)^(1/(p~-1)) (1 + log(R/eps)).

    eps == R is the boundary case (log factor 1); eps > R is rejected.
    """
    p = _p_tilde(params.profile)
    rho = _rho(params, rho)
    if not eps > 0.0 or not R > 0.0:
        raise DegenerateInputError(f"R and eps must be positive, got R={R}, eps={eps}")
    if eps > R:
        raise DegenerateInputError(f"eps={eps} exceeds the ball radius R={R}")
    c = params.constants
    ratio = R ** 2 * rho ** params.profile.alpha / eps ** 2
    return c.c2 * c.c3 * ratio ** (1.0 / (p - 1.0)) * (1.0 + math.log(R / eps))


def ucb_class_covering_bound(params: BoundParams, R: float, B: float, eps: float,
                             rho: Optional[float] = None) -> CoveringBound:
    """
    Log covering number of the optimistic Q class {min(mu + beta b, H)} with
    ||mu|| <= R and beta <= B, split as RKHS ball at eps/3, the interval
    [0, B] at eps/3 and the uncertainty class at eps/(3B).
    """
    p = _p_tilde(params.profile)
    if p <= UNCERTAINTY_WARN_P_TILDE:
        logger.warning(f"p_tilde = {p:.3f} <= {UNCERTAINTY_WARN_P_TILDE:.0f}: "
                       f"the uncertainty covering term grows fast in 1/eps")
    return _ucb_class_parts(params, R, B, eps, rho)


def _ucb_class_parts(params: BoundParams, R: float, B: float, eps: float,
                     rho: Optional[float]) -> CoveringBound:
    p = _p_tilde(params.profile)
    rho = _rho(params, rho)
    if not eps > 0.0:
        raise DegenerateInputError(f"eps must be positive, got {eps}")
    if B < 0.0 or R < 0.0:
        raise InvalidInputError(f"R and B must be non-negative, got R={R}, B={B}")

    third = eps / 3.0
    rkhs = rkhs_covering_bound(params, R, third, rho) if 0.0 < third < R else 0.0
    interval = math.log1p(3.0 * B / eps)
    uncertainty = 0.0
    if B > 0.0:
        eps_b = eps / (3.0 * B)
        if eps_b < 1.0:
            c = params.constants
            ratio = rho ** params.profile.alpha / eps_b ** 2
            uncertainty = (c.c4 ** 2 * c.c5 * ratio ** (2.0 / (p - 1.0))
                           * (1.0 + math.log(1.0 / eps_b)))
    parts = {"rkhs": rkhs, "interval": interval, "uncertainty": uncertainty}
    return CoveringBound(total=rkhs + interval + uncertainty, parts=parts)


def predictor_radius(params: BoundParams) -> float:
    """R_T = H + 1 + (H / (2 lambda)) sqrt(2 (Gamma(T) + 1 + log(2/delta)))."""
    H = params.horizon
    gamma_T = info_gain_bound(params, params.num_episodes)
    return rkhs_norm_bound(H + 1.0, H / 2.0, params.lam, gamma_T, params.delta / 2.0)


@dataclass(frozen=True)
class _BetaTerms:
    """The parts of the confidence-width condition that do not depend on beta."""
    eps: float
    gamma_t: float
    radius: float


def _beta_terms(params: BoundParams, t: int, N_element: int,
                rho_element: Optional[float]) -> _BetaTerms:
    H, T, delta = params.horizon, params.num_episodes, params.delta
    eps = H * math.sqrt(math.log(T * H / delta)) / math.sqrt(N_element)
    return _BetaTerms(eps=eps, gamma_t=info_gain_bound(params, t, rho_element),
                      radius=predictor_radius(params))


def _beta_rhs(params: BoundParams, beta: float, t: int, terms: _BetaTerms,
              rho_element: Optional[float]) -> float:
    H, T, delta = params.horizon, params.num_episodes, params.delta
    cover = _ucb_class_parts(params, terms.radius, beta, terms.eps, rho_element)
    inner = terms.gamma_t + cover.total + 1.0 + math.log(2.0 * T * H / delta)
    return (H + 1.0 + (H / math.sqrt(2.0)) * math.sqrt(inner)
            + 3.0 * math.sqrt(t) * terms.eps / params.lam)


def beta_rhs(params: BoundParams, beta: float, t: int, N_element: int,
             rho_element: Optional[float] = None) -> float:
    """Right-hand side of the confidence-width condition evaluated at ``beta``."""
    return _beta_rhs(params, beta, t, _beta_terms(params, t, N_element, rho_element), rho_element)


def solve_beta(params: BoundParams, t: int, N_element: int,
               rho_element: Optional[float] = None) -> float:
    """
    Smallest beta with beta >= RHS(beta), by fixed-point iteration from H + 1.

    Raises:
        NoFixedPointError: when 200 iterations do not settle to 1e-9 relative.
    """
    if N_element < 1:
        raise InvalidInputError(f"N_element must be >= 1, got {N_element}")
    if t < 1:
        raise InvalidInputError(f"t must be >= 1, got {t}")
    if _p_tilde(params.profile) <= UNCERTAINTY_WARN_P_TILDE:
        logger.warning(f"p_tilde = {params.profile.p_tilde:.3f}: the beta iteration is unlikely to settle")
    terms = _beta_terms(params, t, N_element, rho_element)
    beta = params.horizon + 1.0
    for iteration in range(BETA_MAX_ITERATIONS):
        try:
            updated = _beta_rhs(params, beta, t, terms, rho_element)
        except OverflowError:
            updated = math.inf
        if not math.isfinite(updated):
            raise NoFixedPointError(f"beta iteration overflowed at step {iteration}", beta)
        if abs(updated - beta) <= BETA_RELATIVE_TOL * updated:
            logger.debug(f"beta fixed point {updated:.6f} after {iteration + 1} iterations")
            return updated
        beta = updated
    raise NoFixedPointError(
        f"beta iteration did not converge in {BETA_MAX_ITERATIONS} steps "
        f"(p_tilde={params.profile.p_tilde:.3f})", beta)


def regret_exponent(dimension: int, alpha: float) -> float:
    return (dimension + alpha / 2.0) / (dimension + alpha)


def matern_regret_exponent(nu: float, dimension: int) -> float:
    return (nu + dimension) / (2.0 * nu + dimension)


def _dimension(params: BoundParams) -> int:
    if params.dimension is None:
        raise InvalidInputError("this bound needs BoundParams.dimension")
    return params.dimension


def regret_bound(params: BoundParams) -> RegretBound:
    """C H^2 T^((d + alpha/2)/(d + alpha)) log T sqrt(log(H/delta))."""
    d = _dimension(params)
    H, T = params.horizon, params.num_episodes
    exponent = regret_exponent(d, params.profile.alpha)
    value = (params.constants.c_regret * H ** 2 * T ** exponent * math.log(T)
             * math.sqrt(math.log(H / params.delta)))
    matern = matern_regret_exponent(params.nu, d) if params.nu is not None else None
    return RegretBound(value=value, exponent=exponent, matern_exponent=matern)


def cover_size_bound(params: BoundParams, T: Optional[int] = None) -> float:
    """C6 T^(d/(d+alpha)) cover elements ever created."""
    d = _dimension(params)
    T = params.num_episodes if T is None else T
    return params.constants.c6 * T ** (d / (d + params.profile.alpha))


def bound_table(params: BoundParams, t_values: Iterable[int],
                partitioned: bool = True) -> pd.DataFrame:
    """
    One row per t with the information-gain bound, the confidence width
    (NaN when the iteration does not settle), the regret bound and the
    cover-size bound at horizon t.
    """
    rows = []
    for t in t_values:
        t = int(t)
        at_t = replace(params, num_episodes=t)
        rho_element = t ** (-1.0 / params.profile.alpha) if partitioned else 1.0
        try:
            beta = solve_beta(at_t, t, t, rho_element)
        except NoFixedPointError as exc:
            logger.warning(f"t={t}: {exc}")
            beta = float("nan")
        row = {"t": t, "info_gain_bound": info_gain_bound(params, t), "beta": beta}
        if params.dimension is not None:
            row["regret_bound"] = regret_bound(at_t).value
            row["cover_size_bound"] = cover_size_bound(at_t)
        rows.append(row)
    return pd.DataFrame(rows)
