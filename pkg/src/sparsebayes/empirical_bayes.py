"""Marginal-maximum-likelihood selection of the spike-and-slab weight, and
hierarchical dimension priors for subset-selection posteriors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .distributions import ConvolvedMarginal, SlabSpec


@dataclass(frozen=True)
class MarginalLikelihood:
    """Profile of the marginal likelihood of the mixing weight alpha for data
    x: L(alpha) = sum_i log((1 - alpha) phi(x_i) + alpha g(x_i)), cached
    through beta_i = g(x_i)/phi(x_i) - 1 (> -1 since g > 0)."""

    x: np.ndarray
    slab: SlabSpec
    beta: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("x must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        object.__setattr__(self, "x", x)
        log_ratio = ConvolvedMarginal(self.slab).log_ratio(x)
        with np.errstate(over="ignore"):
            beta = np.expm1(log_ratio)  # overflows to +inf harmlessly
        object.__setattr__(self, "beta", beta)

    @property
    def n(self) -> int:
        return self.x.size

    def log_likelihood(self, alpha: float) -> float:
        """L(alpha) up to the alpha-free constant sum_i log phi(x_i)."""
        with np.errstate(over="ignore"):
            terms = np.log1p(alpha * self.beta)
        return float(np.sum(terms))

    def score(self, alpha: float) -> float:
        """dL/dalpha = sum_i beta_i / (1 + alpha beta_i), strictly decreasing
        in alpha; infinite beta_i contribute 1/alpha."""
        b = self.beta
        with np.errstate(over="ignore", invalid="ignore"):
            terms = b / (1.0 + alpha * b)
        return float(np.sum(np.where(np.isinf(b), 1.0 / alpha, terms)))


@dataclass(frozen=True)
class MmleResult:
    alpha: float
    at_lower: bool
    at_upper: bool


def mmle(ml: MarginalLikelihood, interval: Optional[tuple[float, float]] = None,
         tol: float = 1e-12, max_iter: int = 200) -> MmleResult:
    """Maximize the marginal likelihood over the weight interval
    (default [1/n, 1]) by bisection on the strictly decreasing score,
    clamping to the boundary when the score keeps one sign."""
    lo, hi = interval if interval is not None else (1.0 / ml.n, 1.0)
    if not (0.0 < lo < hi <= 1.0):
        raise ValueError("interval must satisfy 0 < lo < hi <= 1")
    if ml.score(lo) <= 0.0:
        return MmleResult(lo, at_lower=True, at_upper=False)
    if ml.score(hi) >= 0.0:
        return MmleResult(hi, at_lower=False, at_upper=True)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if ml.score(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return MmleResult(0.5 * (lo + hi), at_lower=False, at_upper=False)


def mmle_alpha(ml: MarginalLikelihood, interval: Optional[tuple[float, float]] = None) -> float:
    """The marginal-maximum-likelihood weight; see `mmle`."""
    return mmle(ml, interval).alpha


def beta_binomial_dim_prior(n: int, a: float = 1.0, b: Optional[float] = None) -> np.ndarray:
    """Log-weights of the dimension prior induced by mixing a Binomial(n,
    alpha) over alpha ~ Beta(a, b); defaults to Beta(1, n+1).

    Returns log pi_n(k) for k = 0..n, normalized in log space.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if b is None:
        b = float(n + 1)
    if a <= 0.0 or b <= 0.0:
        raise ValueError("Beta parameters must be > 0")
    k = np.arange(n + 1)
    log_binom = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
    lw = log_binom + special.betaln(a + k, b + n - k) - special.betaln(a, b)
    return lw - special.logsumexp(lw)


def exp_decrease_check(log_weights) -> Optional[float]:
    """The smallest D with pi_n(k) <= D pi_n(k-1) for every k >= 1 where the
    ratio is defined, or None when no D < 1 works."""
    lw = np.asarray(log_weights, dtype=float)
    ratios = []
    for k in range(1, lw.size):
        prev, cur = lw[k - 1], lw[k]
        if cur == -np.inf:
            continue  # 0 <= D * anything
        if prev == -np.inf:
            return None  # mass reappears after a zero: no finite ratio
        ratios.append(cur - prev)
    if not ratios:
        return None
    d = math.exp(max(ratios))
    return d if d < 1.0 else None
