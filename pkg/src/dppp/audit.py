"""Exact and empirical privacy audits for the integer noise mechanisms.

The exact audits evaluate the hockey-stick divergence

    delta(eps) = sum_x max(0, P(x) - e^eps * Q(x))

between the noise pmf P and its shift Q, which is the smallest delta for
which the pair is (eps, delta)-indistinguishable.  Binomial pmfs are built by
the ratio recurrence in 50-digit mpmath arithmetic so the sums are reliable
far below the deltas of interest.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

import mpmath
import numpy as np

from .mechanisms import (
    BinomialPlan,
    GaussianPlan,
    Plan,
    PrivacyParams,
    ag_sigma,
    bm_min_tosses,
    discrete_gaussian_table,
    discrete_gaussian_variance,
    dwork_min_tosses,
    truncation_bound,
)
from .protocol import RunConfig, VoteVector, run_protocol

_DPS = 50

COORDINATE = "coordinate"
FLIP = "flip"


@dataclass(frozen=True)
class DpAuditReport:
    epsilon: float
    delta_claimed: float
    delta_actual: float
    mechanism: str
    support_bound: int
    neighbor: str = COORDINATE
    slack: float = 0.0

    @property
    def passed(self) -> bool:
        return self.delta_actual <= self.delta_claimed + self.slack

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def binomial_pmf(n: int) -> list:
    """Binomial(n, 1/2) pmf as mpf values (current mpmath precision)."""
    p = mpmath.mpf(2) ** (-n)
    out = [p]
    for k in range(n):
        p = p * (n - k) / (k + 1)
        out.append(p)
    return out


def _hockey_stick_shift(pmf: Sequence, eps: float, shift: int) -> mpmath.mpf:
    """sum_k max(0, P(k) - e^eps P(k + shift)) with P zero off its support."""
    e = mpmath.exp(mpmath.mpf(eps))
    size = len(pmf)
    total = mpmath.mpf(0)
    for k, p in enumerate(pmf):
        j = k + shift
        q = pmf[j] if 0 <= j < size else 0
        diff = p - e * q
        if diff > 0:
            total += diff
    return total


def _hockey_stick_flip(pmf: Sequence, eps: float) -> float:
    """Two independent coordinates, one shifted +1 and the other -1.

    This is the neighbor where one teacher's vote moves between two classes.
    Evaluated in float64 row by row; used for moderate supports only.
    """
    p = np.array([float(x) for x in pmf])
    up = np.concatenate(([0.0], p[:-1]))  # P(k - 1)
    down = np.concatenate((p[1:], [0.0]))  # P(k + 1)
    e = math.exp(eps)
    rows = []
    for k1 in range(len(p)):
        if p[k1] == 0.0:
            continue
        diff = p[k1] * p - e * up[k1] * down
        rows.append(float(np.sum(diff[diff > 0])))
    return math.fsum(rows)


def hockey_stick(p: Mapping[int, float], q: Mapping[int, float], eps: float) -> float:
    """Hockey-stick divergence between two integer-indexed pmfs."""
    with mpmath.workdps(_DPS):
        e = mpmath.exp(mpmath.mpf(eps))
        total = mpmath.mpf(0)
        for x, px in p.items():
            diff = mpmath.mpf(px) - e * mpmath.mpf(q.get(x, 0))
            if diff > 0:
                total += diff
        return float(total)


def pmf_delta(pmf: Sequence, eps: float, shift: int = 1, neighbor: str = COORDINATE) -> float:
    """Worst of the two shift directions (or the flip neighbor) for a pmf on consecutive integers."""
    if neighbor == FLIP:
        return _hockey_stick_flip(pmf, eps)
    with mpmath.workdps(_DPS):
        pmf = [mpmath.mpf(x) for x in pmf]
        return float(max(_hockey_stick_shift(pmf, eps, shift), _hockey_stick_shift(pmf, eps, -shift)))


def bm_exact_delta(n: int, epsilon: float, neighbor: str = COORDINATE) -> float:
    """Exact delta of centered Binomial(n, 1/2) noise at sensitivity 1."""
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    with mpmath.workdps(_DPS):
        return pmf_delta(binomial_pmf(n), epsilon, 1, neighbor)


def discrete_gaussian_pmf_mp(sigma: float) -> list:
    bound = truncation_bound(sigma)
    s2 = 2 * mpmath.mpf(sigma) ** 2
    weights = [mpmath.exp(-mpmath.mpf(x * x) / s2) for x in range(-bound, bound + 1)]
    z = mpmath.fsum(weights)
    return [w / z for w in weights]


def dg_exact_delta(sigma: float, epsilon: float, sensitivity: int = 1, neighbor: str = COORDINATE) -> float:
    """Exact delta of the truncated discrete Gaussian on [-B, B], B = ceil(12 sigma)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    with mpmath.workdps(_DPS):
        return pmf_delta(discrete_gaussian_pmf_mp(sigma), epsilon, sensitivity, neighbor)


def _convolve(a: dict, b: dict) -> dict:
    out: dict = {}
    for x, px in a.items():
        for y, py in b.items():
            out[x + y] = out.get(x + y, 0) + px * py
    return out


def convolve_pmf(pmf: Mapping[int, float], copies: int) -> dict:
    """Distribution of the sum of ``copies`` independent draws from ``pmf``.

    Float pmfs go through numpy; exact types (Fraction, mpf) use a pure
    Python product so no precision is lost.
    """
    if copies < 1:
        raise ValueError(f"copies must be >= 1, got {copies}")
    total = sum(pmf.values())
    if abs(float(total) - 1.0) > 1e-12:
        raise ValueError(f"pmf sums to {float(total)}, not 1")
    lo, hi = min(pmf), max(pmf)
    if all(isinstance(v, (float, np.floating)) for v in pmf.values()):
        base = np.zeros(hi - lo + 1)
        for x, p in pmf.items():
            base[x - lo] = p
        mask = np.zeros_like(base)
        mask[[x - lo for x in pmf]] = 1.0
        acc, acc_mask = np.array([1.0]), np.array([1.0])
        sq, sq_mask = base, mask
        k = copies
        while k:
            if k & 1:
                acc, acc_mask = np.convolve(acc, sq), np.convolve(acc_mask, sq_mask)
            k >>= 1
            if k:
                sq, sq_mask = np.convolve(sq, sq), np.minimum(np.convolve(sq_mask, sq_mask), 1.0)
            acc_mask = np.minimum(acc_mask, 1.0)
        # keep exactly the reachable sums, including zero-probability keys of the input
        start = lo * copies
        return {start + i: float(p) for i, p in enumerate(acc) if acc_mask[i] > 0}
    acc = {0: type(next(iter(pmf.values())))(1)}
    for _ in range(copies):
        acc = _convolve(acc, dict(pmf))
    return acc


def binomial_pmf_dict(n: int, exact: bool = False) -> dict:
    if exact:
        return {k: Fraction(math.comb(n, k), 2**n) for k in range(n + 1)}
    with mpmath.workdps(_DPS):
        return {k: float(p) for k, p in enumerate(binomial_pmf(n))}


def plan_share_pmf(plan: Plan) -> dict:
    """pmf of one party's noise share (Binomial shares uncentered)."""
    if isinstance(plan, BinomialPlan):
        return binomial_pmf_dict(plan.m_per_party)
    bound, pmf, _ = discrete_gaussian_table(plan.sigma_per_party)
    return {x - bound: p for x, p in enumerate(pmf)}


def _dense(pmf: Mapping[int, float]) -> list:
    lo, hi = min(pmf), max(pmf)
    return [pmf.get(x, 0.0) for x in range(lo, hi + 1)]


def plan_exact_delta(plan: Plan, params: PrivacyParams, honest: Optional[int] = None, neighbor: str = COORDINATE) -> float:
    """Exact delta of the aggregate noise when only ``honest`` parties contribute.

    Binomial shares convolve exactly to Binomial(h m, 1/2), so that case uses
    the closed form; discrete Gaussian shares are convolved numerically.
    """
    h = plan.honest if honest is None else honest
    if isinstance(plan, BinomialPlan):
        return bm_exact_delta(h * plan.m_per_party, params.epsilon, neighbor)
    agg = convolve_pmf(plan_share_pmf(plan), h)
    return pmf_delta(_dense(agg), params.epsilon, 1, neighbor)


def collusion_residual_check(plan: Plan, n_parties: int, compromised: Iterable[int]) -> bool:
    """Whether the parties outside ``compromised`` alone supply the calibrated noise."""
    compromised = set(compromised)
    if len(compromised) > n_parties // 3:
        raise ValueError(f"at most floor(N/3) = {n_parties // 3} parties may be compromised")
    remaining = n_parties - len(compromised)
    if isinstance(plan, BinomialPlan):
        return remaining * plan.m_per_party >= plan.n_total
    # compare realised share variance, not s^2: the two part ways for small shares
    return remaining * discrete_gaussian_variance(plan.sigma_per_party) >= plan.sigma_total**2 * (1 - 1e-9)


def dkw_slack(trials: int, confidence: float = 0.999) -> float:
    return 3 * math.sqrt(math.log(2 / (1 - confidence)) / (2 * trials))


Runner = Callable[[Sequence[VoteVector], int, np.random.Generator], np.ndarray]


def argmax_runner(plan: Plan) -> Runner:
    """Vectorized plaintext noisy argmax, distributionally identical to the protocol.

    Every voter contributes one share per class; ties go to the lowest
    class, as in :func:`dppp.protocol.predict`.
    """

    def run(votes: Sequence[VoteVector], trials: int, gen: np.random.Generator) -> np.ndarray:
        counts = np.array([v.entries for v in votes]).sum(axis=0)
        n_voters, c = len(votes), len(counts)
        if isinstance(plan, BinomialPlan):
            noise = gen.binomial(plan.m_per_party * n_voters, 0.5, size=(trials, c)) if plan.m_per_party else np.zeros((trials, c), dtype=np.int64)
        else:
            bound, _, cdf = discrete_gaussian_table(plan.sigma_per_party)
            draws = np.searchsorted(np.asarray(cdf), gen.random((trials, n_voters, c)), side="right") - bound
            noise = draws.sum(axis=1)
        return np.argmax(counts + noise, axis=1)

    return run


def protocol_runner(config: RunConfig, plan: Plan, keys) -> Runner:
    """Full encrypted protocol, one run per trial; slow, meant for a few hundred trials."""

    def run(votes: Sequence[VoteVector], trials: int, gen: np.random.Generator) -> np.ndarray:
        out = np.empty(trials, dtype=np.int64)
        for k in range(trials):
            cfg = RunConfig(**{**config.__dict__, "seed": int(gen.integers(2**62))})
            out[k] = run_protocol(cfg, votes, plan, keys=keys)[1]
        return out

    return run


def empirical_dp_test(
    runner: Runner,
    votes_d: Sequence[VoteVector],
    votes_d_prime: Sequence[VoteVector],
    epsilon: float,
    delta: float,
    trials: int,
    seed: int = 0,
    mechanism: str = "argmax",
) -> DpAuditReport:
    """Monte-Carlo check that no output's frequency ratio breaks (eps, delta).

    ``delta_actual`` is the largest observed freq_D(s) - e^eps freq_D'(s) over
    outputs s and both input orders; the test passes when it stays within
    ``delta`` plus the DKW-style slack at confidence 0.999.
    """
    gen = np.random.default_rng(seed)
    out_d = runner(votes_d, trials, gen)
    out_dp = runner(votes_d_prime, trials, gen)
    support = len(votes_d[0])
    freq_d = np.bincount(out_d, minlength=support) / trials
    freq_dp = np.bincount(out_dp, minlength=support) / trials
    e = math.exp(epsilon)
    worst = max(float(np.max(freq_d - e * freq_dp)), float(np.max(freq_dp - e * freq_d)), 0.0)
    return DpAuditReport(
        epsilon=epsilon,
        delta_claimed=delta,
        delta_actual=worst,
        mechanism=mechanism,
        support_bound=support,
        neighbor="votes",
        slack=dkw_slack(trials),
    )


EPSILON_GRID = (0.1, 0.2, 0.5, 1.0, 2.0)
DELTA_GRID = (1e-2, 1e-3, 1e-4)

# the continuous calibration carried over to the integer lattice is allowed
# to overshoot delta by this fraction
DG_DISCRETIZATION_SLACK = 0.1


def binomial_grid_audit(
    epsilons: Sequence[float] = EPSILON_GRID,
    deltas: Sequence[float] = DELTA_GRID,
    neighbors: Sequence[str] = (COORDINATE,),
) -> list[dict]:
    """Per grid point: calibrated n, the older n, and exact delta at each."""
    rows = []
    for eps in epsilons:
        for delta in deltas:
            params = PrivacyParams(eps, delta)
            n = bm_min_tosses(params)
            n_old = dwork_min_tosses(params)
            for neighbor in neighbors:
                report = DpAuditReport(eps, delta, bm_exact_delta(n, eps, neighbor), "binomial", n + 1, neighbor)
                rows.append(
                    {
                        **report.to_dict(),
                        "n_total": n,
                        "n_dwork": n_old,
                        "tighter": n < n_old,
                    }
                )
    return rows


def gaussian_grid_audit(
    epsilons: Sequence[float] = EPSILON_GRID,
    deltas: Sequence[float] = DELTA_GRID,
    neighbors: Sequence[str] = (COORDINATE,),
) -> list[dict]:
    rows = []
    for eps in epsilons:
        for delta in deltas:
            sigma = ag_sigma(eps, delta, 1.0)
            for neighbor in neighbors:
                slack = DG_DISCRETIZATION_SLACK * delta if neighbor == COORDINATE else 0.0
                report = DpAuditReport(
                    eps, delta, dg_exact_delta(sigma, eps, 1, neighbor), "discrete_gaussian",
                    truncation_bound(sigma), neighbor, slack,
                )
                rows.append({**report.to_dict(), "sigma": sigma})
    return rows
