"""Noise calibration and sampling for distributed differential privacy.

Two integer-valued mechanisms are supported:

* Binomial: the aggregate noise is a centered Binomial(n, 1/2) with
  n >= 2 ((2 + eps) / eps)^2 ln(2 / delta); each honest party flips m coins.
* Discrete Gaussian: the aggregate standard deviation solves the analytic
  Gaussian condition; each honest party samples a share of variance
  sigma^2 / h (parameter ~ sigma / sqrt(h), see :func:`dg_share_sigma`).

h is the number of parties guaranteed honest, N - floor((1 - gamma) N).
"""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Union

from .errors import CalibrationError

BINOMIAL = "binomial"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class PrivacyParams:
    """Target (epsilon, delta, gamma).

    ``epsilon = math.inf`` is accepted as the no-noise limit and calibrates to
    zero noise.
    """

    epsilon: float
    delta: float
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise CalibrationError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise CalibrationError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.gamma <= 1:
            raise CalibrationError(f"gamma must lie in (0, 1], got {self.gamma}")


def honest_count(n_parties: int, gamma: float) -> int:
    """N - floor((1 - gamma) N), i.e. the guaranteed honest parties.

    A 1e-9 nudge keeps float round-off (1 - 2/3) * 6 = 1.9999... from hiding
    a compromised party; the nudge can only over-count compromise.
    """
    if n_parties < 1:
        raise CalibrationError(f"n_parties must be >= 1, got {n_parties}")
    compromised = math.floor((1 - gamma) * n_parties + 1e-9)
    return n_parties - compromised


@dataclass(frozen=True)
class BinomialPlan:
    n_total: int
    m_per_party: int
    n_parties: int
    gamma: float = 1.0
    success_p: Fraction = Fraction(1, 2)

    mechanism = BINOMIAL

    def __post_init__(self) -> None:
        if self.m_per_party < 0 or self.m_per_party % 2:
            raise CalibrationError(f"m_per_party must be a non-negative even integer, got {self.m_per_party}")
        if self.honest * self.m_per_party < self.n_total:
            raise CalibrationError("honest parties do not supply n_total tosses")

    @property
    def honest(self) -> int:
        return honest_count(self.n_parties, self.gamma)

    @property
    def noiseless(self) -> bool:
        return self.m_per_party == 0

    def to_record(self, params: Optional[PrivacyParams] = None) -> dict:
        rec = {"mechanism": self.mechanism}
        if params is not None:
            rec.update(epsilon=params.epsilon, delta=params.delta)
        rec.update(
            gamma=self.gamma,
            n_parties=self.n_parties,
            honest=self.honest,
            n_total=self.n_total,
            m_per_party=self.m_per_party,
        )
        return rec


@dataclass(frozen=True)
class GaussianPlan:
    sigma_total: float
    sigma_per_party: float
    n_parties: int
    gamma: float = 1.0
    sensitivity: float = 1.0

    mechanism = GAUSSIAN

    @property
    def honest(self) -> int:
        return honest_count(self.n_parties, self.gamma)

    @property
    def truncation_bound(self) -> int:
        return truncation_bound(self.sigma_per_party)

    @property
    def noiseless(self) -> bool:
        return self.sigma_per_party == 0

    def to_record(self, params: Optional[PrivacyParams] = None) -> dict:
        rec = {"mechanism": self.mechanism}
        if params is not None:
            rec.update(epsilon=params.epsilon, delta=params.delta)
        rec.update(
            gamma=self.gamma,
            n_parties=self.n_parties,
            honest=self.honest,
            sigma_total=self.sigma_total,
            sigma_per_party=self.sigma_per_party,
            truncation_bound=self.truncation_bound,
        )
        if params is not None and math.isfinite(params.epsilon) and self.sigma_total > 0:
            rec["residual"] = analytic_gaussian_delta(self.sigma_total, params.epsilon, self.sensitivity) - params.delta
        return rec


Plan = Union[BinomialPlan, GaussianPlan]


def bm_min_tosses(params: PrivacyParams) -> int:
    """Smallest total toss count n with n >= 2 ((2 + eps)/eps)^2 ln(2/delta)."""
    eps = params.epsilon
    if math.isinf(eps):
        return 0
    return math.ceil(2 * ((2 + eps) / eps) ** 2 * math.log(2 / params.delta))


def dwork_min_tosses(params: PrivacyParams) -> int:
    """The older requirement n >= 64 ln(2/delta) / eps^2, for comparison."""
    if math.isinf(params.epsilon):
        return 0
    return math.ceil(64 * math.log(2 / params.delta) / params.epsilon**2)


def _even_ceil(x: int) -> int:
    return x + (x % 2)


def bm_plan(params: PrivacyParams, n_parties: int) -> BinomialPlan:
    h = honest_count(n_parties, params.gamma)
    if h == 0:
        raise CalibrationError(f"no honest parties for N={n_parties}, gamma={params.gamma}")
    n_total = bm_min_tosses(params)
    m = _even_ceil(-(-n_total // h))
    return BinomialPlan(n_total=n_total, m_per_party=m, n_parties=n_parties, gamma=params.gamma)


def noiseless_plan(n_parties: int) -> BinomialPlan:
    return BinomialPlan(n_total=0, m_per_party=0, n_parties=n_parties)


def sample_binomial_share(m: int, rng: random.Random) -> int:
    """Count of heads in m fair coin flips; exact Binomial(m, 1/2)."""
    if m < 0:
        raise ValueError(f"m must be non-negative, got {m}")
    return rng.getrandbits(m).bit_count() if m else 0


def std_normal_cdf(x: float) -> float:
    # erfc keeps relative accuracy deep in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def analytic_gaussian_delta(sigma: float, epsilon: float, sensitivity: float = 1.0) -> float:
    """Left side of the exact Gaussian (eps, delta) condition at ``sigma``."""
    a = sensitivity / (2 * sigma)
    b = epsilon * sigma / sensitivity
    return std_normal_cdf(a - b) - math.exp(epsilon) * std_normal_cdf(-a - b)


def classical_gaussian_sigma(epsilon: float, delta: float, sensitivity: float = 1.0) -> float:
    return math.sqrt(2 * math.log(1.25 / delta)) * sensitivity / epsilon


def ag_sigma(epsilon: float, delta: float, sensitivity: float = 1.0) -> float:
    """Smallest sigma meeting the analytic Gaussian condition, by bisection.

    The condition's left side decreases in sigma, so the returned value is
    the upper end of the final bracket (never under-noised).
    """
    if math.isinf(epsilon):
        return 0.0
    if not (epsilon > 0 and 0 < delta < 1 and sensitivity > 0):
        raise CalibrationError(f"invalid calibration inputs eps={epsilon}, delta={delta}, sens={sensitivity}")
    lo = sensitivity / (10 * (1 + epsilon))
    hi = 10 * classical_gaussian_sigma(epsilon, delta, sensitivity)
    f_lo = analytic_gaussian_delta(lo, epsilon, sensitivity) - delta
    f_hi = analytic_gaussian_delta(hi, epsilon, sensitivity) - delta
    if not (f_lo > 0 >= f_hi):
        raise CalibrationError(f"failed to bracket the root on [{lo}, {hi}]")
    for _ in range(200):
        if hi - lo <= 1e-12:
            break
        mid = 0.5 * (lo + hi)
        if analytic_gaussian_delta(mid, epsilon, sensitivity) > delta:
            lo = mid
        else:
            hi = mid
    return hi


def discrete_gaussian_variance(sigma: float) -> float:
    if sigma == 0:
        return 0.0
    bound = truncation_bound(sigma)
    w = [math.exp(-(x * x) / (2 * sigma * sigma)) for x in range(-bound, bound + 1)]
    return math.fsum(x * x * wx for x, wx in zip(range(-bound, bound + 1), w)) / math.fsum(w)


def dg_share_sigma(target_variance: float) -> float:
    """Parameter s whose discrete Gaussian has variance ``target_variance``.

    Var(N_Z(0, s^2)) < s^2, and the gap is large below s ~ 0.6 (at s = 0.25
    the variance is about 1% of s^2).  Splitting sigma^2 as h shares of
    sigma^2 / h therefore under-noises the sum when shares are small, so the
    share parameter is solved on the variance instead.  For s >= 1 the two
    agree to better than 1e-6.
    """
    if target_variance <= 0:
        return 0.0
    lo = math.sqrt(target_variance)
    hi = max(2 * lo, 1.0)
    for _ in range(200):
        if hi - lo <= 1e-13 * hi:
            break
        mid = 0.5 * (lo + hi)
        if discrete_gaussian_variance(mid) < target_variance:
            lo = mid
        else:
            hi = mid
    return hi


def dg_plan(params: PrivacyParams, n_parties: int, sensitivity: float = 1.0) -> GaussianPlan:
    h = honest_count(n_parties, params.gamma)
    if h == 0:
        raise CalibrationError(f"no honest parties for N={n_parties}, gamma={params.gamma}")
    sigma = ag_sigma(params.epsilon, params.delta, sensitivity)
    return GaussianPlan(
        sigma_total=sigma,
        sigma_per_party=dg_share_sigma(sigma * sigma / h),
        n_parties=n_parties,
        gamma=params.gamma,
        sensitivity=sensitivity,
    )


def make_plan(mechanism: str, params: PrivacyParams, n_parties: int) -> Plan:
    if mechanism in (BINOMIAL, "bm"):
        return bm_plan(params, n_parties)
    if mechanism in (GAUSSIAN, "dgm", "dg"):
        return dg_plan(params, n_parties)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def truncation_bound(sigma: float) -> int:
    return math.ceil(12 * sigma)


@lru_cache(maxsize=256)
def discrete_gaussian_table(sigma: float) -> tuple[int, tuple[float, ...], tuple[float, ...]]:
    """Support offset, normalized pmf and cumulative sums on [-B, B]."""
    bound = truncation_bound(sigma)
    if sigma == 0:
        return 0, (1.0,), (1.0,)
    weights = [math.exp(-(x * x) / (2 * sigma * sigma)) for x in range(-bound, bound + 1)]
    total = math.fsum(weights)
    pmf = tuple(w / total for w in weights)
    cdf = []
    acc = 0.0
    for p in pmf:
        acc += p
        cdf.append(acc)
    cdf[-1] = 1.0
    return bound, pmf, tuple(cdf)


def discrete_gaussian_pmf(sigma: float) -> dict[int, float]:
    bound, pmf, _ = discrete_gaussian_table(sigma)
    return {x - bound: p for x, p in enumerate(pmf)}


def sample_discrete_gaussian(sigma: float, rng: random.Random) -> int:
    """Draw from pmf proportional to exp(-x^2 / (2 sigma^2)) truncated at 12 sigma."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    bound, _, cdf = discrete_gaussian_table(float(sigma))
    return bisect.bisect_right(cdf, rng.random()) - bound


def sample_share(plan: Plan, rng: random.Random) -> int:
    """One party's raw noise draw for one class coordinate.

    Binomial draws are the uncentered coin count; the aggregate offset is
    removed after decryption.
    """
    if isinstance(plan, BinomialPlan):
        return sample_binomial_share(plan.m_per_party, rng)
    return sample_discrete_gaussian(plan.sigma_per_party, rng)


def plan_offset_per_party(plan: Plan) -> int:
    return plan.m_per_party // 2 if isinstance(plan, BinomialPlan) else 0

