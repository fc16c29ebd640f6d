"""Core model types and log-density evaluations.

Two longitudinal mixed models over country-level landings time series:

* total model: y_ct ~ N(beta0 + b0_c + b1_c * t, sigma^2) with independent
  N(0, sigma0^2) intercept effects and N(0, sigma1^2) slope effects.
* joint model: industrial and artisanal streams share one observation
  sigma; the per-country intercept pairs and slope pairs are bivariate
  normal with covariances built from (sigma_I, sigma_A, rho).

Priors: N(0, intercept_sd^2) on the fixed intercepts, U(0, sd_bound) on
every standard deviation, U(-1, 1) on the correlations.  Out-of-support
states evaluate to -inf rather than raising, so Metropolis rejection can
handle boundary proposals uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .errors import (
    DataFormatError,
    DegenerateCovarianceError,
    SectorMismatchError,
)

LOG_2PI = math.log(2.0 * math.pi)


class Sector(Enum):
    TOTAL = "total"
    INDUSTRIAL = "industrial"
    ARTISANAL = "artisanal"


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the prior; defaults match the production models."""

    intercept_sd: float = 10.0
    sd_bound: float = 10.0


@dataclass(frozen=True)
class Observation:
    """One log-landings measurement for (country, year-index, sector)."""

    country: int
    t: int
    sector: Sector
    y: float


@dataclass
class Dataset:
    """A validated panel of observations plus country labels."""

    observations: tuple[Observation, ...]
    labels: tuple[str, ...]
    horizon: int

    def __post_init__(self) -> None:
        self.observations = tuple(self.observations)
        self.labels = tuple(self.labels)
        if len(self.labels) < 1:
            raise DataFormatError("dataset needs at least one country")
        seen = set()
        for obs in self.observations:
            if not (0 <= obs.country < self.n_countries):
                raise DataFormatError(f"country index {obs.country} out of range")
            if not (0 <= obs.t < self.horizon):
                raise DataFormatError(f"time index {obs.t} outside horizon {self.horizon}")
            if not math.isfinite(obs.y):
                raise DataFormatError("non-finite observation value")
            key = (obs.country, obs.t, obs.sector)
            if key in seen:
                raise DataFormatError(f"duplicate observation for {key}")
            seen.add(key)
        self._arrays_cache: dict = {}

    @property
    def n_countries(self) -> int:
        return len(self.labels)

    @property
    def availability(self) -> dict[int, frozenset[Sector]]:
        out: dict[int, set[Sector]] = {c: set() for c in range(self.n_countries)}
        for obs in self.observations:
            out[obs.country].add(obs.sector)
        return {c: frozenset(s) for c, s in out.items()}

    def sectors_present(self) -> frozenset[Sector]:
        return frozenset(obs.sector for obs in self.observations)

    def arrays(self, sector: Sector | None = None):
        """(country, t, y) as numpy arrays, optionally filtered by sector."""
        if sector not in self._arrays_cache:
            obs = [o for o in self.observations if sector is None or o.sector == sector]
            self._arrays_cache[sector] = (
                np.array([o.country for o in obs], dtype=np.intp),
                np.array([o.t for o in obs], dtype=float),
                np.array([o.y for o in obs], dtype=float),
            )
        return self._arrays_cache[sector]


@dataclass(frozen=True)
class TotalParams:
    beta0: float
    sigma: float
    sigma0: float
    sigma1: float


@dataclass(frozen=True)
class JointParams:
    beta0_ind: float
    beta0_art: float
    sigma: float
    sigma0_ind: float
    sigma0_art: float
    sigma1_ind: float
    sigma1_art: float
    rho0: float
    rho1: float


@dataclass
class TotalEffects:
    """Per-country random intercepts and slopes of the total model."""

    b0: np.ndarray
    b1: np.ndarray

    def copy(self) -> "TotalEffects":
        return TotalEffects(self.b0.copy(), self.b1.copy())


@dataclass
class JointEffects:
    """Per-country paired random effects of the joint model."""

    b0_ind: np.ndarray
    b0_art: np.ndarray
    b1_ind: np.ndarray
    b1_art: np.ndarray

    def copy(self) -> "JointEffects":
        return JointEffects(
            self.b0_ind.copy(), self.b0_art.copy(), self.b1_ind.copy(), self.b1_art.copy()
        )


Params = Union[TotalParams, JointParams]
Effects = Union[TotalEffects, JointEffects]


@dataclass
class ModelState:
    params: Params
    effects: Effects


@dataclass(frozen=True)
class Cov2:
    """A 2x2 positive-definite symmetric matrix in variance units."""

    a11: float
    a12: float
    a22: float

    def __post_init__(self) -> None:
        if self.a11 <= 0 or self.a22 <= 0 or self.det <= 0:
            raise DegenerateCovarianceError(
                f"covariance [[{self.a11},{self.a12}],[{self.a12},{self.a22}]] not positive definite"
            )

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    def inv_entries(self) -> tuple[float, float, float]:
        """(q11, q12, q22) of the inverse matrix."""
        d = self.det
        return self.a22 / d, -self.a12 / d, self.a11 / d


def build_covariance(sd_a: float, sd_b: float, rho: float) -> Cov2:
    """Covariance of a correlated pair from its two sds and correlation."""
    if sd_a <= 0 or sd_b <= 0 or abs(rho) >= 1:
        raise DegenerateCovarianceError(
            f"invalid covariance parameters sd_a={sd_a}, sd_b={sd_b}, rho={rho}"
        )
    off = rho * sd_a * sd_b
    return Cov2(sd_a * sd_a, off, sd_b * sd_b)


def _is_total(state: ModelState) -> bool:
    return isinstance(state.params, TotalParams)


def linear_predictor(state: ModelState, country: int, t: float, sector: Sector) -> float:
    """Model mean for one (country, time, sector) cell."""
    if _is_total(state):
        if sector is not Sector.TOTAL:
            raise SectorMismatchError(f"total model has no {sector.value} stream")
        p, e = state.params, state.effects
        return p.beta0 + e.b0[country] + e.b1[country] * t
    if sector is Sector.INDUSTRIAL:
        p, e = state.params, state.effects
        return p.beta0_ind + e.b0_ind[country] + e.b1_ind[country] * t
    if sector is Sector.ARTISANAL:
        p, e = state.params, state.effects
        return p.beta0_art + e.b0_art[country] + e.b1_art[country] * t
    raise SectorMismatchError("joint model has no total stream")


def _normal_logpdf_sum(resid: np.ndarray, sigma: float) -> float:
    n = resid.size
    return -0.5 * n * LOG_2PI - n * math.log(sigma) - 0.5 * float(resid @ resid) / (sigma * sigma)


def log_likelihood(state: ModelState, data: Dataset) -> float:
    """Sum of normal log densities over every observation in the panel."""
    if _is_total(state):
        p, e = state.params, state.effects
        c, t, y = data.arrays(Sector.TOTAL)
        if y.size != len(data.observations):
            raise SectorMismatchError("total model requires a total-sector dataset")
        resid = y - (p.beta0 + e.b0[c] + e.b1[c] * t)
        return _normal_logpdf_sum(resid, p.sigma)
    p, e = state.params, state.effects
    if Sector.TOTAL in data.sectors_present():
        raise SectorMismatchError("joint model cannot score total-sector observations")
    out = 0.0
    ci, ti, yi = data.arrays(Sector.INDUSTRIAL)
    if yi.size:
        out += _normal_logpdf_sum(yi - (p.beta0_ind + e.b0_ind[ci] + e.b1_ind[ci] * ti), p.sigma)
    ca, ta, ya = data.arrays(Sector.ARTISANAL)
    if ya.size:
        out += _normal_logpdf_sum(ya - (p.beta0_art + e.b0_art[ca] + e.b1_art[ca] * ta), p.sigma)
    return out


def bivariate_normal_logpdf(x1, x2, cov: Cov2):
    """Closed-form centered bivariate normal log density (vectorized)."""
    q11, q12, q22 = cov.inv_entries()
    quad = q11 * x1 * x1 + 2.0 * q12 * x1 * x2 + q22 * x2 * x2
    return -LOG_2PI - 0.5 * math.log(cov.det) - 0.5 * quad


def log_random_effects_density(state: ModelState) -> float:
    """Log density of all random effects given the current variance parameters."""
    if _is_total(state):
        p, e = state.params, state.effects
        return _normal_logpdf_sum(e.b0, p.sigma0) + _normal_logpdf_sum(e.b1, p.sigma1)
    p, e = state.params, state.effects
    cov0 = build_covariance(p.sigma0_ind, p.sigma0_art, p.rho0)
    cov1 = build_covariance(p.sigma1_ind, p.sigma1_art, p.rho1)
    t0 = bivariate_normal_logpdf(e.b0_ind, e.b0_art, cov0)
    t1 = bivariate_normal_logpdf(e.b1_ind, e.b1_art, cov1)
    return float(np.sum(t0) + np.sum(t1))


def _log_uniform(x: float, lo: float, hi: float) -> float:
    if not (lo < x < hi):
        return -math.inf
    return -math.log(hi - lo)


def log_prior(params: Params, priors: PriorSpec = PriorSpec()) -> float:
    """Joint log prior; -inf outside any support."""
    sd = priors.intercept_sd
    bound = priors.sd_bound

    def intercept(b: float) -> float:
        return -0.5 * LOG_2PI - math.log(sd) - 0.5 * (b / sd) ** 2

    if isinstance(params, TotalParams):
        out = intercept(params.beta0)
        for s in (params.sigma, params.sigma0, params.sigma1):
            out += _log_uniform(s, 0.0, bound)
        return out
    out = intercept(params.beta0_ind) + intercept(params.beta0_art)
    for s in (
        params.sigma,
        params.sigma0_ind,
        params.sigma0_art,
        params.sigma1_ind,
        params.sigma1_art,
    ):
        out += _log_uniform(s, 0.0, bound)
    out += _log_uniform(params.rho0, -1.0, 1.0)
    out += _log_uniform(params.rho1, -1.0, 1.0)
    return out


def log_posterior_unnorm(
    state: ModelState, data: Dataset, priors: PriorSpec = PriorSpec()
) -> float:
    """log likelihood + log random-effects density + log prior; -inf propagates."""
    lp = log_prior(state.params, priors)
    if lp == -math.inf:
        return -math.inf
    return lp + log_likelihood(state, data) + log_random_effects_density(state)


TOTAL_PARAM_NAMES = ("beta0", "sigma", "sigma0", "sigma1")
JOINT_PARAM_NAMES = (
    "beta0_I",
    "beta0_A",
    "sigma",
    "sigma0_I",
    "sigma0_A",
    "sigma1_I",
    "sigma1_A",
    "rho0",
    "rho1",
)


def params_to_dict(params: Params) -> dict[str, float]:
    if isinstance(params, TotalParams):
        return {
            "beta0": params.beta0,
            "sigma": params.sigma,
            "sigma0": params.sigma0,
            "sigma1": params.sigma1,
        }
    return {
        "beta0_I": params.beta0_ind,
        "beta0_A": params.beta0_art,
        "sigma": params.sigma,
        "sigma0_I": params.sigma0_ind,
        "sigma0_A": params.sigma0_art,
        "sigma1_I": params.sigma1_ind,
        "sigma1_A": params.sigma1_art,
        "rho0": params.rho0,
        "rho1": params.rho1,
    }


def params_from_dict(model_kind: str, d: dict[str, float]) -> Params:
    if model_kind == "total":
        return TotalParams(d["beta0"], d["sigma"], d["sigma0"], d["sigma1"])
    if model_kind == "joint":
        return JointParams(
            d["beta0_I"],
            d["beta0_A"],
            d["sigma"],
            d["sigma0_I"],
            d["sigma0_A"],
            d["sigma1_I"],
            d["sigma1_A"],
            d["rho0"],
            d["rho1"],
        )
    raise ValueError(f"unknown model kind {model_kind!r}")
