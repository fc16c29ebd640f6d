"""Metropolis-within-Gibbs engine for both landings models.

One sweep updates, in fixed order: fixed intercepts, random effects,
observation variance, random-effect scale parameters.  Conjugate blocks
are drawn exactly; the joint model's covariance parameters (four sds and
two correlations) move by scalar random-walk Metropolis in transformed
space (log sd, atanh rho) with Jacobian corrections.  Step sizes adapt by
Robbins-Monro toward 0.44 acceptance during burn-in only.

The fixed-intercept update is partially collapsed: it integrates the
random intercepts out of the conditional (they are redrawn immediately
afterwards), which removes the slow intercept/random-effect random walk
of the naive scalar Gibbs scheme.  The plain scalar conditional is kept
for frozen-effects runs and validation.

Chains are deterministic given (seed, chain_index): chain c uses
``SeedSequence(entropy=seed, spawn_key=(c,))``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateDataError
from .model import (
    LOG_2PI,
    Cov2,
    Dataset,
    JointEffects,
    JointParams,
    ModelState,
    PriorSpec,
    Sector,
    TotalEffects,
    TotalParams,
    build_covariance,
)

MH_TARGET_ACCEPT = 0.44

_SKIP_KEYS = {
    "intercepts",
    "random_effects",
    "re_intercepts",
    "re_slopes",
    "obs_variance",
    "re_sds",
    "re_sd0",
    "re_sd1",
    "cov_params",
}


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20000
    burnin: int = 10000
    thin: int = 5
    chains: int = 4
    seed: int = 0
    adapt: bool = True
    step_size: float = 0.5
    skip_updates: tuple[str, ...] = ()
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self) -> None:
        if self.iterations <= 0 or self.thin <= 0 or self.chains <= 0:
            raise ConfigError("iterations, thin and chains must be positive")
        if not (0 <= self.burnin < self.iterations):
            raise ConfigError("burnin must satisfy 0 <= burnin < iterations")
        if self.step_size <= 0:
            raise ConfigError("step size must be positive")
        bad = set(self.skip_updates) - _SKIP_KEYS
        if bad:
            raise ConfigError(f"unknown skip keys {sorted(bad)}")
        if self.n_retained < 1:
            raise ConfigError("configuration retains no draws")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burnin) // self.thin

    def skipped(self) -> frozenset[str]:
        out = set(self.skip_updates)
        if "random_effects" in out:
            out |= {"re_intercepts", "re_slopes"}
        if "re_sds" in out:
            out |= {"re_sd0", "re_sd1"}
        return frozenset(out)


@dataclass
class ChainDraws:
    """Retained draws keyed by parameter name, plus MH acceptance rates."""

    draws: dict[str, np.ndarray]
    acceptance: dict[str, float]
    chain_index: int

    def __post_init__(self) -> None:
        lengths = {len(v) for v in self.draws.values()}
        if len(lengths) > 1:
            raise ConfigError("unequal draw lengths across parameters")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.draws)

    @property
    def n_draws(self) -> int:
        return len(next(iter(self.draws.values())))


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Deterministic per-chain generator derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chain_index,)))


# -- shared conjugate building blocks ---------------------------------------


def conj_normal(prior_var: float, lik_prec: float, lik_lin: float) -> tuple[float, float]:
    """Posterior (mean, var) of a normal mean with N(0, prior_var) prior.

    lik_prec is the likelihood precision contribution (e.g. n/sigma^2) and
    lik_lin the matching linear term (sum of weighted residuals / sigma^2).
    """
    prec = 1.0 / prior_var + lik_prec
    var = 1.0 / prec
    return lik_lin * var, var


def joint_pair_precision(
    prior_cov: Cov2, prec_add: tuple[float, float], lin: tuple[float, float]
) -> tuple[tuple[float, float, float], tuple[float, float]]:
    """Full-conditional precision (q11, q12, q22) and linear term of a
    correlated effect pair with diagonal likelihood information."""
    q11, q12, q22 = prior_cov.inv_entries()
    return (q11 + prec_add[0], q12, q22 + prec_add[1]), lin


def sample_trunc_invgamma_var(
    shape: float,
    rate: float,
    upper_var: float,
    rng: np.random.Generator,
    current_var: float | None = None,
    max_reject: int = 1000,
) -> float:
    """Draw a variance from IG(shape, rate) truncated to (0, upper_var).

    Rejection sampling on the untruncated draw; after max_reject failures
    fall back to a slice-sampling move on the sd scale (which keeps the
    truncated conditional invariant given the current value).
    """
    if shape <= 0:
        raise DegenerateDataError(f"improper variance conditional (shape {shape})")
    if rate <= 0:
        raise DegenerateDataError("zero residual sum of squares: degenerate conditional")
    for _ in range(max_reject):
        x = rng.gamma(shape, 1.0 / rate)
        if x > 0:
            v = 1.0 / x
            if v < upper_var:
                return v
    upper_sd = math.sqrt(upper_var)
    cur = math.sqrt(current_var) if current_var is not None else math.sqrt(
        min(rate / (shape + 1.0), 0.25 * upper_var)
    )
    cur = min(max(cur, 1e-12), upper_sd * (1 - 1e-12))
    power = 2.0 * shape + 1.0

    def logf(s: float) -> float:
        return -power * math.log(s) - rate / (s * s)

    height = logf(cur) - rng.exponential()
    lo, hi = 0.0, upper_sd
    for _ in range(1000):
        prop = rng.uniform(lo, hi)
        if logf(prop) >= height:
            return prop * prop
        if prop < cur:
            lo = prop
        else:
            hi = prop
    return cur * cur


def _draw_correlated_pairs(prior_cov, prec_add_1, prec_add_2, lin_1, lin_2, rng):
    """Vectorized bivariate-normal full-conditional draws for effect pairs."""
    q11, q12, q22 = prior_cov.inv_entries()
    a = q11 + prec_add_1
    d = q22 + prec_add_2
    det = a * d - q12 * q12
    c11 = d / det
    c12 = -q12 / det
    c22 = a / det
    m1 = c11 * lin_1 + c12 * lin_2
    m2 = c12 * lin_1 + c22 * lin_2
    l11 = np.sqrt(c11)
    l21 = c12 / l11
    l22 = np.sqrt(c22 - l21 * l21)
    z = rng.standard_normal((2, np.shape(a)[0] if np.ndim(a) else 1))
    x1 = m1 + l11 * z[0]
    x2 = m2 + l21 * z[0] + l22 * z[1]
    return x1, x2


def _pairs_log_density(x1, x2, sa, sb, rho, bound) -> float:
    """Log density of centered correlated pairs; -inf outside prior support."""
    if not (0.0 < sa < bound and 0.0 < sb < bound and abs(rho) < 1.0):
        return -math.inf
    n = len(x1)
    omr = 1.0 - rho * rho
    logdet = 2.0 * math.log(sa) + 2.0 * math.log(sb) + math.log(omr)
    quad = float(
        np.sum(
            (x1 * x1) / (sa * sa)
            - 2.0 * rho * x1 * x2 / (sa * sb)
            + (x2 * x2) / (sb * sb)
        )
    ) / omr
    return -n * LOG_2PI - 0.5 * n * logdet - 0.5 * quad


def mh_log_accept(delta_target: float, delta_log_jacobian: float) -> float:
    """Log acceptance ratio of a transformed-space random-walk proposal."""
    return delta_target + delta_log_jacobian


# -- per-model caches and samplers ------------------------------------------


class _Groups:
    """Per-country sufficient statistics of one observation stream."""

    def __init__(self, c, t, y, n_countries):
        self.c = c
        self.t = t
        self.y = y
        self.n_obs = len(y)
        self.counts = np.bincount(c, minlength=n_countries).astype(float)
        self.sum_t2 = np.bincount(c, weights=t * t, minlength=n_countries)

    def sums(self, values):
        return np.bincount(self.c, weights=values, minlength=len(self.counts))


class TotalSampler:
    """Mutable sampling state for the total-landings model."""

    def __init__(self, data: Dataset, priors: PriorSpec, state: ModelState):
        if Sector.TOTAL not in data.sectors_present():
            raise DegenerateDataError("total model requires total-sector observations")
        self.priors = priors
        self.C = data.n_countries
        c, t, y = data.arrays(Sector.TOTAL)
        self.g = _Groups(c, t, y, self.C)
        self.labels = data.labels
        self.set_state(state)

    def set_state(self, state: ModelState) -> None:
        p = state.params
        assert isinstance(p, TotalParams)
        self.beta0 = p.beta0
        self.sigma = p.sigma
        self.sigma0 = p.sigma0
        self.sigma1 = p.sigma1
        self.b0 = np.asarray(state.effects.b0, dtype=float).copy()
        self.b1 = np.asarray(state.effects.b1, dtype=float).copy()

    def get_state(self) -> ModelState:
        return ModelState(
            TotalParams(self.beta0, self.sigma, self.sigma0, self.sigma1),
            TotalEffects(self.b0.copy(), self.b1.copy()),
        )

    # conditional-parameter helpers (exact formulas, also used by tests)

    def intercept_conditional_plain(self) -> tuple[float, float]:
        g = self.g
        resid = g.y - self.b0[g.c] - self.b1[g.c] * g.t
        s2 = self.sigma * self.sigma
        return conj_normal(
            self.priors.intercept_sd**2, g.n_obs / s2, float(np.sum(resid)) / s2
        )

    def intercept_conditional_collapsed(self) -> tuple[float, float]:
        g = self.g
        z = g.y - self.b1[g.c] * g.t
        zsum = g.sums(z)
        has = g.counts > 0
        v = self.sigma0**2 + self.sigma**2 / g.counts[has]
        zbar = zsum[has] / g.counts[has]
        return conj_normal(
            self.priors.intercept_sd**2, float(np.sum(1.0 / v)), float(np.sum(zbar / v))
        )

    def update_intercept(self, rng, collapsed: bool) -> None:
        mean, var = (
            self.intercept_conditional_collapsed()
            if collapsed
            else self.intercept_conditional_plain()
        )
        self.beta0 = mean + math.sqrt(var) * rng.standard_normal()

    def update_random_intercepts(self, rng) -> None:
        g = self.g
        s2 = self.sigma * self.sigma
        resid = g.y - self.beta0 - self.b1[g.c] * g.t
        prec = 1.0 / self.sigma0**2 + g.counts / s2
        var = 1.0 / prec
        mean = g.sums(resid) / s2 * var
        self.b0 = mean + np.sqrt(var) * rng.standard_normal(self.C)

    def update_random_slopes(self, rng) -> None:
        g = self.g
        s2 = self.sigma * self.sigma
        resid = g.y - self.beta0 - self.b0[g.c]
        prec = 1.0 / self.sigma1**2 + g.sum_t2 / s2
        var = 1.0 / prec
        mean = g.sums(g.t * resid) / s2 * var
        self.b1 = mean + np.sqrt(var) * rng.standard_normal(self.C)

    def update_obs_variance(self, rng) -> None:
        g = self.g
        resid = g.y - self.beta0 - self.b0[g.c] - self.b1[g.c] * g.t
        ss = float(resid @ resid)
        if g.n_obs > 1 and ss == 0.0:
            raise DegenerateDataError("zero residual sum of squares with N > 1")
        v = sample_trunc_invgamma_var(
            (g.n_obs - 1) / 2.0,
            ss / 2.0,
            self.priors.sd_bound**2,
            rng,
            current_var=self.sigma**2,
        )
        self.sigma = math.sqrt(v)

    def update_re_sd(self, which: int, rng) -> None:
        b = self.b0 if which == 0 else self.b1
        cur = self.sigma0 if which == 0 else self.sigma1
        ss = float(b @ b)
        if self.C > 1 and ss == 0.0:
            raise DegenerateDataError("all random effects are zero: degenerate conditional")
        v = sample_trunc_invgamma_var(
            (self.C - 1) / 2.0, ss / 2.0, self.priors.sd_bound**2, rng, current_var=cur**2
        )
        if which == 0:
            self.sigma0 = math.sqrt(v)
        else:
            self.sigma1 = math.sqrt(v)

    def sweep(self, rng, skipped: frozenset[str], iteration: int, adapting: bool) -> None:
        collapsed = "re_intercepts" not in skipped
        if "intercepts" not in skipped:
            self.update_intercept(rng, collapsed)
        if "re_intercepts" not in skipped:
            self.update_random_intercepts(rng)
        if "re_slopes" not in skipped:
            self.update_random_slopes(rng)
        if "obs_variance" not in skipped:
            self.update_obs_variance(rng)
        if "re_sd0" not in skipped:
            self.update_re_sd(0, rng)
        if "re_sd1" not in skipped:
            self.update_re_sd(1, rng)

    def param_names(self) -> list[str]:
        names = ["beta0", "sigma", "sigma0", "sigma1"]
        names += [f"b0[{lbl}]" for lbl in self.labels]
        names += [f"b1[{lbl}]" for lbl in self.labels]
        return names

    def values(self) -> np.ndarray:
        return np.concatenate(
            ([self.beta0, self.sigma, self.sigma0, self.sigma1], self.b0, self.b1)
        )

    def acceptance(self) -> dict[str, float]:
        return {}


_JOINT_MH_PARAMS = ("sigma0_I", "sigma0_A", "rho0", "sigma1_I", "sigma1_A", "rho1")


class JointSampler:
    """Mutable sampling state for the shared-parameter joint model."""

    def __init__(self, data: Dataset, priors: PriorSpec, state: ModelState, step_size: float):
        if Sector.TOTAL in data.sectors_present():
            raise DegenerateDataError("joint model cannot use total-sector observations")
        self.priors = priors
        self.C = data.n_countries
        self.labels = data.labels
        ci, ti, yi = data.arrays(Sector.INDUSTRIAL)
        ca, ta, ya = data.arrays(Sector.ARTISANAL)
        self.gi = _Groups(ci, ti, yi, self.C)
        self.ga = _Groups(ca, ta, ya, self.C)
        self.log_step = {name: math.log(step_size) for name in _JOINT_MH_PARAMS}
        self.acc_count = {name: 0 for name in _JOINT_MH_PARAMS}
        self.prop_count = {name: 0 for name in _JOINT_MH_PARAMS}
        self.set_state(state)

    def set_state(self, state: ModelState) -> None:
        p = state.params
        assert isinstance(p, JointParams)
        self.beta_i = p.beta0_ind
        self.beta_a = p.beta0_art
        self.sigma = p.sigma
        self.sd0 = [p.sigma0_ind, p.sigma0_art]
        self.sd1 = [p.sigma1_ind, p.sigma1_art]
        self.rho = [p.rho0, p.rho1]
        e = state.effects
        self.b0_i = np.asarray(e.b0_ind, dtype=float).copy()
        self.b0_a = np.asarray(e.b0_art, dtype=float).copy()
        self.b1_i = np.asarray(e.b1_ind, dtype=float).copy()
        self.b1_a = np.asarray(e.b1_art, dtype=float).copy()

    def get_state(self) -> ModelState:
        return ModelState(
            JointParams(
                self.beta_i,
                self.beta_a,
                self.sigma,
                self.sd0[0],
                self.sd0[1],
                self.sd1[0],
                self.sd1[1],
                self.rho[0],
                self.rho[1],
            ),
            JointEffects(
                self.b0_i.copy(), self.b0_a.copy(), self.b1_i.copy(), self.b1_a.copy()
            ),
        )

    def _cov(self, which: int) -> Cov2:
        sds = self.sd0 if which == 0 else self.sd1
        return build_covariance(sds[0], sds[1], self.rho[which])

    def intercept_conditional_plain(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Per-sector scalar conditionals (mean, var) with effects held fixed."""
        pv = self.priors.intercept_sd**2
        s2 = self.sigma * self.sigma
        ri = self.gi.y - self.b0_i[self.gi.c] - self.b1_i[self.gi.c] * self.gi.t
        ra = self.ga.y - self.b0_a[self.ga.c] - self.b1_a[self.ga.c] * self.ga.t
        return (
            conj_normal(pv, self.gi.n_obs / s2, float(np.sum(ri)) / s2),
            conj_normal(pv, self.ga.n_obs / s2, float(np.sum(ra)) / s2),
        )

    def update_intercepts_plain(self, rng) -> None:
        (mi, vi), (ma, va) = self.intercept_conditional_plain()
        self.beta_i = mi + math.sqrt(vi) * rng.standard_normal()
        self.beta_a = ma + math.sqrt(va) * rng.standard_normal()

    def update_intercepts_collapsed(self, rng) -> None:
        """Draw (beta_I, beta_A) jointly with the intercept pairs integrated out."""
        s2 = self.sigma * self.sigma
        cov0 = self._cov(0)
        pv = self.priors.intercept_sd**2
        p11 = 1.0 / pv
        p22 = 1.0 / pv
        p12 = 0.0
        h1 = 0.0
        h2 = 0.0
        zi = self.gi.y - self.b1_i[self.gi.c] * self.gi.t
        za = self.ga.y - self.b1_a[self.ga.c] * self.ga.t
        zsum_i = self.gi.sums(zi)
        zsum_a = self.ga.sums(za)
        ni = self.gi.counts
        na = self.ga.counts
        for c in range(self.C):
            if ni[c] > 0 and na[c] > 0:
                v11 = cov0.a11 + s2 / ni[c]
                v22 = cov0.a22 + s2 / na[c]
                v12 = cov0.a12
                det = v11 * v22 - v12 * v12
                q11, q12, q22 = v22 / det, -v12 / det, v11 / det
                m1 = zsum_i[c] / ni[c]
                m2 = zsum_a[c] / na[c]
                p11 += q11
                p12 += q12
                p22 += q22
                h1 += q11 * m1 + q12 * m2
                h2 += q12 * m1 + q22 * m2
            elif ni[c] > 0:
                v = cov0.a11 + s2 / ni[c]
                p11 += 1.0 / v
                h1 += zsum_i[c] / ni[c] / v
            elif na[c] > 0:
                v = cov0.a22 + s2 / na[c]
                p22 += 1.0 / v
                h2 += zsum_a[c] / na[c] / v
        det = p11 * p22 - p12 * p12
        c11, c12, c22 = p22 / det, -p12 / det, p11 / det
        m1 = c11 * h1 + c12 * h2
        m2 = c12 * h1 + c22 * h2
        l11 = math.sqrt(c11)
        l21 = c12 / l11
        l22 = math.sqrt(c22 - l21 * l21)
        z1, z2 = rng.standard_normal(2)
        self.beta_i = m1 + l11 * z1
        self.beta_a = m2 + l21 * z1 + l22 * z2

    def update_random_effects(self, rng) -> None:
        s2 = self.sigma * self.sigma
        # intercept pairs
        ri = self.gi.y - self.beta_i - self.b1_i[self.gi.c] * self.gi.t
        ra = self.ga.y - self.beta_a - self.b1_a[self.ga.c] * self.ga.t
        self.b0_i, self.b0_a = _draw_correlated_pairs(
            self._cov(0),
            self.gi.counts / s2,
            self.ga.counts / s2,
            self.gi.sums(ri) / s2,
            self.ga.sums(ra) / s2,
            rng,
        )
        # slope pairs
        ri = self.gi.y - self.beta_i - self.b0_i[self.gi.c]
        ra = self.ga.y - self.beta_a - self.b0_a[self.ga.c]
        self.b1_i, self.b1_a = _draw_correlated_pairs(
            self._cov(1),
            self.gi.sum_t2 / s2,
            self.ga.sum_t2 / s2,
            self.gi.sums(self.gi.t * ri) / s2,
            self.ga.sums(self.ga.t * ra) / s2,
            rng,
        )

    def update_obs_variance(self, rng) -> None:
        ri = self.gi.y - self.beta_i - self.b0_i[self.gi.c] - self.b1_i[self.gi.c] * self.gi.t
        ra = self.ga.y - self.beta_a - self.b0_a[self.ga.c] - self.b1_a[self.ga.c] * self.ga.t
        ss = float(ri @ ri) + float(ra @ ra)
        n = self.gi.n_obs + self.ga.n_obs
        if n > 1 and ss == 0.0:
            raise DegenerateDataError("zero residual sum of squares with N > 1")
        v = sample_trunc_invgamma_var(
            (n - 1) / 2.0, ss / 2.0, self.priors.sd_bound**2, rng, current_var=self.sigma**2
        )
        self.sigma = math.sqrt(v)

    def _block_density(self, which: int, sa: float, sb: float, rho: float) -> float:
        x1 = self.b0_i if which == 0 else self.b1_i
        x2 = self.b0_a if which == 0 else self.b1_a
        return _pairs_log_density(x1, x2, sa, sb, rho, self.priors.sd_bound)

    def update_cov_params(self, rng, iteration: int, adapting: bool) -> None:
        for name in _JOINT_MH_PARAMS:
            block = 0 if name.endswith("0") or "0_" in name else 1
            sds = self.sd0 if block == 0 else self.sd1
            rho = self.rho[block]
            step = math.exp(self.log_step[name])
            eps = rng.standard_normal()
            u = rng.uniform()
            if name.startswith("sigma"):
                idx = 0 if name.endswith("_I") else 1
                cur = sds[idx]
                z_new = math.log(cur) + step * eps
                prop = math.exp(z_new)
                cand = [prop, sds[1]] if idx == 0 else [sds[0], prop]
                delta = self._block_density(block, cand[0], cand[1], rho) - self._block_density(
                    block, sds[0], sds[1], rho
                )
                la = mh_log_accept(delta, z_new - math.log(cur))
            else:
                cur = rho
                z_new = math.atanh(cur) + step * eps
                prop = math.tanh(z_new)
                delta = self._block_density(block, sds[0], sds[1], prop) - self._block_density(
                    block, sds[0], sds[1], cur
                )
                jac = (
                    math.log1p(-prop * prop) - math.log1p(-cur * cur)
                    if abs(prop) < 1
                    else -math.inf
                )
                la = mh_log_accept(delta, jac)
            accept = la >= 0 or math.log(u) < la
            if accept:
                if name.startswith("sigma"):
                    sds[0 if name.endswith("_I") else 1] = prop
                else:
                    self.rho[block] = prop
            if adapting:
                a_prob = math.exp(min(0.0, la)) if la > -math.inf else 0.0
                gamma = (iteration + 1) ** -0.6
                self.log_step[name] += gamma * (a_prob - MH_TARGET_ACCEPT)
            else:
                self.prop_count[name] += 1
                self.acc_count[name] += int(accept)

    def sweep(self, rng, skipped: frozenset[str], iteration: int, adapting: bool) -> None:
        collapsed = "re_intercepts" not in skipped
        if "intercepts" not in skipped:
            if collapsed:
                self.update_intercepts_collapsed(rng)
            else:
                self.update_intercepts_plain(rng)
        if "re_intercepts" not in skipped or "re_slopes" not in skipped:
            # intercept and slope pairs are drawn as blocks; skipping one
            # half of the pair structure is not supported for the joint model
            self.update_random_effects(rng)
        if "obs_variance" not in skipped:
            self.update_obs_variance(rng)
        if "cov_params" not in skipped:
            self.update_cov_params(rng, iteration, adapting)

    def param_names(self) -> list[str]:
        names = list(
            ("beta0_I", "beta0_A", "sigma", "sigma0_I", "sigma0_A", "sigma1_I", "sigma1_A", "rho0", "rho1")
        )
        for tag in ("b0_I", "b0_A", "b1_I", "b1_A"):
            names += [f"{tag}[{lbl}]" for lbl in self.labels]
        return names

    def values(self) -> np.ndarray:
        return np.concatenate(
            (
                [
                    self.beta_i,
                    self.beta_a,
                    self.sigma,
                    self.sd0[0],
                    self.sd0[1],
                    self.sd1[0],
                    self.sd1[1],
                    self.rho[0],
                    self.rho[1],
                ],
                self.b0_i,
                self.b0_a,
                self.b1_i,
                self.b1_a,
            )
        )

    def acceptance(self) -> dict[str, float]:
        return {
            name: self.acc_count[name] / self.prop_count[name]
            for name in _JOINT_MH_PARAMS
            if self.prop_count[name]
        }


# -- initialization ----------------------------------------------------------


def _clip_sd(x: float, priors: PriorSpec) -> float:
    upper = min(9.9, 0.99 * priors.sd_bound)
    if not math.isfinite(x) or x <= 0:
        x = 0.1
    return min(max(x, 0.01), upper)


def _moment_estimates(g: _Groups):
    """Grand mean, per-country means/slopes and a pooled residual sd."""
    has = g.counts > 0
    grand = float(np.mean(g.y)) if g.n_obs else 0.0
    means = np.zeros(len(g.counts))
    means[has] = g.sums(g.y)[has] / g.counts[has]
    slopes = np.zeros(len(g.counts))
    st = g.sums(g.t)
    sty = g.sums(g.t * g.y)
    with np.errstate(invalid="ignore", divide="ignore"):
        var_t = g.sum_t2 - np.where(has, st * st / np.maximum(g.counts, 1), 0.0)
        cov_ty = sty - np.where(has, st * means * 1.0, 0.0)
        ok = has & (var_t > 0)
        slopes[ok] = cov_ty[ok] / var_t[ok]
    fitted = means[g.c] + slopes[g.c] * (g.t - np.where(g.counts[g.c] > 0, st[g.c] / g.counts[g.c], 0.0))
    resid = g.y - fitted
    resid_sd = float(np.std(resid)) if g.n_obs > 1 else 0.5
    return grand, means, slopes, resid_sd


def initial_state(model_kind: str, data: Dataset, priors: PriorSpec = PriorSpec()) -> ModelState:
    """Deterministic moment-based starting point inside the prior support."""
    C = data.n_countries
    if model_kind == "total":
        c, t, y = data.arrays(Sector.TOTAL)
        g = _Groups(c, t, y, C)
        grand, means, slopes, resid_sd = _moment_estimates(g)
        sigma0 = float(np.std(means - grand, ddof=1)) if C > 1 else 1.0
        sigma1 = float(np.std(slopes, ddof=1)) if C > 1 else 0.1
        params = TotalParams(
            grand,
            _clip_sd(resid_sd, priors),
            _clip_sd(sigma0, priors),
            _clip_sd(sigma1, priors),
        )
        return ModelState(params, TotalEffects(np.zeros(C), np.zeros(C)))
    if model_kind == "joint":
        ci, ti, yi = data.arrays(Sector.INDUSTRIAL)
        ca, ta, ya = data.arrays(Sector.ARTISANAL)
        gi = _Groups(ci, ti, yi, C)
        ga = _Groups(ca, ta, ya, C)
        grand_i, means_i, slopes_i, rsd_i = _moment_estimates(gi)
        grand_a, means_a, slopes_a, rsd_a = _moment_estimates(ga)
        n_tot = gi.n_obs + ga.n_obs
        resid_sd = (gi.n_obs * rsd_i + ga.n_obs * rsd_a) / n_tot if n_tot else 0.5

        def spread(values, mask_counts):
            active = values[mask_counts > 0]
            return float(np.std(active, ddof=1)) if len(active) > 1 else 1.0

        params = JointParams(
            grand_i,
            grand_a,
            _clip_sd(resid_sd, priors),
            _clip_sd(spread(means_i - grand_i, gi.counts), priors),
            _clip_sd(spread(means_a - grand_a, ga.counts), priors),
            _clip_sd(spread(slopes_i, gi.counts), priors),
            _clip_sd(spread(slopes_a, ga.counts), priors),
            0.0,
            0.0,
        )
        return ModelState(
            params, JointEffects(np.zeros(C), np.zeros(C), np.zeros(C), np.zeros(C))
        )
    raise ConfigError(f"unknown model kind {model_kind!r}")


# -- chain runners -----------------------------------------------------------


def _make_sampler(model_kind: str, data: Dataset, config: ChainConfig, state: ModelState):
    if model_kind == "total":
        return TotalSampler(data, config.priors, state)
    if model_kind == "joint":
        return JointSampler(data, config.priors, state, config.step_size)
    raise ConfigError(f"unknown model kind {model_kind!r}")


def run_chain(
    model_kind: str,
    data: Dataset,
    config: ChainConfig,
    chain_index: int = 0,
    init_state: ModelState | None = None,
) -> ChainDraws:
    """Run one chain; fully deterministic given (config.seed, chain_index)."""
    rng = chain_rng(config.seed, chain_index)
    state = init_state if init_state is not None else initial_state(model_kind, data, config.priors)
    sampler = _make_sampler(model_kind, data, config, state)
    skipped = config.skipped()
    n_ret = config.n_retained
    names = sampler.param_names()
    out = np.empty((n_ret, len(names)))
    j = 0
    for it in range(config.iterations):
        sampler.sweep(rng, skipped, it, adapting=config.adapt and it < config.burnin)
        if it >= config.burnin and (it - config.burnin) % config.thin == 0 and j < n_ret:
            out[j] = sampler.values()
            j += 1
    draws = {name: np.ascontiguousarray(out[:, k]) for k, name in enumerate(names)}
    return ChainDraws(draws, sampler.acceptance(), chain_index)


def _run_chain_task(args):
    return run_chain(*args)


def run_chains(
    model_kind: str,
    data: Dataset,
    config: ChainConfig,
    parallel: int = 1,
    init_state: ModelState | None = None,
) -> list[ChainDraws]:
    """Run config.chains independent chains, optionally in parallel.

    Output order is by chain index regardless of completion order, and the
    draws are identical whether chains run sequentially or concurrently.
    """
    tasks = [(model_kind, data, config, k, init_state) for k in range(config.chains)]
    if parallel > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, config.chains)) as pool:
            return list(pool.map(_run_chain_task, tasks))
    return [_run_chain_task(t) for t in tasks]


# -- single-update entry points ----------------------------------------------


def update_fixed_intercepts(
    state: ModelState, data: Dataset, rng, priors: PriorSpec = PriorSpec()
) -> ModelState:
    """Exact scalar conjugate update of the fixed intercept(s), effects fixed."""
    if isinstance(state.params, TotalParams):
        s = TotalSampler(data, priors, state)
        s.update_intercept(rng, collapsed=False)
        return s.get_state()
    s = JointSampler(data, priors, state, 0.5)
    s.update_intercepts_plain(rng)
    return s.get_state()


def update_random_effects_total(
    state: ModelState, data: Dataset, rng, priors: PriorSpec = PriorSpec()
) -> ModelState:
    s = TotalSampler(data, priors, state)
    s.update_random_intercepts(rng)
    s.update_random_slopes(rng)
    return s.get_state()


def update_random_effects_joint(
    state: ModelState, data: Dataset, rng, priors: PriorSpec = PriorSpec()
) -> ModelState:
    s = JointSampler(data, priors, state, 0.5)
    s.update_random_effects(rng)
    return s.get_state()


def update_obs_variance(
    state: ModelState, data: Dataset, rng, priors: PriorSpec = PriorSpec()
) -> ModelState:
    if isinstance(state.params, TotalParams):
        s = TotalSampler(data, priors, state)
    else:
        s = JointSampler(data, priors, state, 0.5)
    s.update_obs_variance(rng)
    return s.get_state()


def update_re_sd_total(state: ModelState, rng, priors: PriorSpec = PriorSpec()) -> ModelState:
    p = state.params
    assert isinstance(p, TotalParams)
    e = state.effects
    C = len(e.b0)
    out = {"sigma0": p.sigma0, "sigma1": p.sigma1}
    for key, b, cur in (("sigma0", e.b0, p.sigma0), ("sigma1", e.b1, p.sigma1)):
        ss = float(np.asarray(b) @ np.asarray(b))
        if C > 1 and ss == 0.0:
            raise DegenerateDataError("all random effects are zero: degenerate conditional")
        v = sample_trunc_invgamma_var(
            (C - 1) / 2.0, ss / 2.0, priors.sd_bound**2, rng, current_var=cur**2
        )
        out[key] = math.sqrt(v)
    return ModelState(replace(p, sigma0=out["sigma0"], sigma1=out["sigma1"]), e.copy())


def update_cov_params_joint(
    state: ModelState,
    rng,
    priors: PriorSpec = PriorSpec(),
    step_size: float = 0.5,
) -> ModelState:
    p = state.params
    assert isinstance(p, JointParams)
    e = state.effects
    C = len(e.b0_ind)
    dummy = Dataset(
        (), tuple(f"c{i}" for i in range(C)), 1
    )  # no observations needed: target is RE density + prior only
    s = JointSampler(dummy, priors, ModelState(p, e), step_size)
    s.update_cov_params(rng, 0, adapting=False)
    return s.get_state()
