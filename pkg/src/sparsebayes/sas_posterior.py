"""Exact per-coordinate spike-and-slab posteriors in the sequence model
X_i = theta_i + eps_i, and exact marginal inclusion probabilities (l-values)
under subset-selection priors via a log-space elementary-symmetric-polynomial
dynamic program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special

from .distributions import (
    CAUCHY,
    LAPLACE,
    ConvolvedMarginal,
    SlabSpec,
    log_phi,
    marginal_g,
    phi,
)


class SamplerError(RuntimeError):
    """Rejection sampler exceeded its try budget; the proposal is broken."""


@dataclass(frozen=True)
class SasPrior:
    """Product spike-and-slab prior: each coordinate is 0 with probability
    1 - alpha and drawn from the slab otherwise."""

    alpha: float
    slab: SlabSpec

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def marginal(self) -> ConvolvedMarginal:
        return ConvolvedMarginal(self.slab)


def posterior_weight(x, prior: SasPrior):
    """Posterior probability a(x) that a coordinate observed at x is drawn
    from the slab: alpha g(x) / ((1 - alpha) phi(x) + alpha g(x)).

    Evaluated in log space; symmetric in x and nondecreasing in |x| for
    Laplace and Cauchy slabs.  Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    scalar = x.ndim == 0
    alpha = prior.alpha
    if alpha == 0.0:
        out = np.zeros_like(x)
    elif alpha == 1.0:
        out = np.ones_like(x)
    else:
        log_odds = math.log(alpha) - math.log1p(-alpha) + prior.marginal.log_ratio(x)
        out = special.expit(log_odds)
    return float(out) if scalar else out


def l_value(x, prior: SasPrior):
    """Posterior probability that the coordinate is exactly zero; the
    complement of `posterior_weight`."""
    w = posterior_weight(x, prior)
    return 1.0 - w


# ---------------------------------------------------------------------------
# The slab component G_x of the posterior
# ---------------------------------------------------------------------------


def _ratio_phi_ndtr(m):
    """phi(m) / Phi(m), stable for very negative m."""
    m = np.asarray(m, dtype=float)
    return np.exp(log_phi(m) - special.log_ndtr(m))


@dataclass(frozen=True)
class SlabComponent:
    """The absolutely-continuous part G_x of the coordinate posterior, with
    density gamma_x(u) = phi(x - u) gamma(u) / g(x)."""

    x: float
    slab: SlabSpec

    @property
    def log_g(self) -> float:
        return float(ConvolvedMarginal(self.slab).log_value(self.x))

    def log_density(self, u):
        u = np.asarray(u, dtype=float)
        return log_phi(self.x - u) + self.slab.log_density(u) - self.log_g

    def density(self, u):
        return np.exp(self.log_density(u))

    # -- Laplace slab: two truncated-Gaussian pieces split at the kink u = 0.
    #    Side weights and conditional moments are all closed form.

    def _laplace_pieces(self):
        lam, x = self.slab.scale, self.x
        mp = x - lam  # location of the positive piece
        mn = x + lam  # location of the negative piece
        lw_pos = -lam * x + special.log_ndtr(mp)
        lw_neg = lam * x + special.log_ndtr(-mn)
        w_pos = float(special.expit(lw_pos - lw_neg))
        return mp, mn, w_pos

    def prob_positive(self) -> float:
        """P(U > 0) under G_x."""
        if self.slab.kind == LAPLACE:
            return self._laplace_pieces()[2]
        return 1.0 - self.cdf(0.0)

    def mean_and_second_moment(self) -> tuple[float, float]:
        if self.slab.kind == LAPLACE:
            mp, mn, w_pos = self._laplace_pieces()
            hp = float(_ratio_phi_ndtr(mp))       # phi(mp)/Phi(mp)
            hn = float(_ratio_phi_ndtr(-mn))      # phi(mn)/Phi(-mn)
            mean_pos, m2_pos = mp + hp, mp * mp + 1.0 + mp * hp
            mean_neg, m2_neg = mn - hn, mn * mn + 1.0 - mn * hn
            mean = w_pos * mean_pos + (1.0 - w_pos) * mean_neg
            m2 = w_pos * m2_pos + (1.0 - w_pos) * m2_neg
            return mean, m2
        g = math.exp(self.log_g)
        x, lam = self.x, self.slab.scale
        lo, hi = x - 45.0, x + 45.0
        pts = [p for p in (0.0, x) if lo < p < hi]

        def moment(power):
            val, _ = integrate.quad(
                lambda u: u**power * phi(x - u) * lam / (math.pi * (lam * lam + u * u)),
                lo, hi, points=pts, epsabs=1e-12, epsrel=1e-10, limit=300,
            )
            return val / g

        return moment(1), moment(2)

    def cdf(self, t: float) -> float:
        """P(U <= t) under G_x."""
        if self.slab.kind == LAPLACE:
            mp, mn, w_pos = self._laplace_pieces()
            if t <= 0.0:
                return (1.0 - w_pos) * float(np.exp(special.log_ndtr(t - mn) - special.log_ndtr(-mn)))
            pos_part = (special.ndtr(t - mp) - special.ndtr(-mp)) / special.ndtr(mp)
            return (1.0 - w_pos) + w_pos * float(pos_part)
        x, lam = self.x, self.slab.scale
        lo = x - 45.0
        if t <= lo:
            return 0.0
        pts = [p for p in (0.0, x) if lo < p < t]
        val, _ = integrate.quad(
            lambda u: phi(x - u) * lam / (math.pi * (lam * lam + u * u)),
            lo, min(t, x + 45.0), points=pts, epsabs=1e-13, epsrel=1e-10, limit=300,
        )
        return min(1.0, val / math.exp(self.log_g))

    def quantile(self, p: float) -> float:
        if not (0.0 < p < 1.0):
            raise ValueError("p must be in (0, 1)")
        lo, hi = min(self.x, 0.0) - 46.0, max(self.x, 0.0) + 46.0
        return float(optimize.brentq(lambda t: self.cdf(t) - p, lo, hi, xtol=1e-11))

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        n = 1 if size is None else int(size)
        if self.slab.kind == LAPLACE:
            mp, mn, w_pos = self._laplace_pieces()
            pos = rng.random(n) < w_pos
            u = rng.random(n)
            out = np.empty(n)
            # positive piece: N(mp, 1) | > 0, sampled through the upper tail
            tail_p = special.ndtr(mp)  # P(Z > -mp)
            out[pos] = mp - special.ndtri((1.0 - u[pos]) * tail_p)
            # negative piece: minus the positive-piece construction at -mn
            tail_n = special.ndtr(-mn)
            out[~pos] = -(-mn - special.ndtri((1.0 - u[~pos]) * tail_n))
            return float(out[0]) if size is None else out
        # Cauchy slab: rejection from N(x, 1); accept w.p. gamma(u)/max gamma
        lam = self.slab.scale
        out = np.empty(n)
        filled = 0
        tries = 0
        while filled < n:
            m = max(64, 2 * (n - filled))
            tries += m
            if tries > 10**6:
                raise SamplerError("rejection sampler exceeded 1e6 proposals")
            cand = self.x + rng.standard_normal(m)
            keep = cand[rng.random(m) < lam * lam / (lam * lam + cand * cand)]
            take = keep[: n - filled]
            out[filled : filled + take.size] = take
            filled += take.size
        return float(out[0]) if size is None else out


@dataclass(frozen=True)
class CoordinatePosterior:
    """Exact posterior of one coordinate given its observation:
    (1 - a) delta_0 + a G_x."""

    x: float
    a: float
    slab_component: SlabComponent

    @classmethod
    def from_prior(cls, x: float, prior: SasPrior) -> "CoordinatePosterior":
        return cls(x=float(x), a=float(posterior_weight(x, prior)), slab_component=SlabComponent(float(x), prior.slab))


def coordinate_moments(x, prior: SasPrior, about=0.0):
    """Posterior mean and second moment about `about` of one coordinate:
    mean = a(x) E[U | slab], E[(theta - about)^2 | x].

    Laplace slabs use closed-form truncated-Gaussian pieces; Cauchy slabs
    integrate numerically.  Accepts scalar or array x (Laplace only for
    arrays).
    """
    x_arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x_arr)) or not np.all(np.isfinite(about)):
        raise ValueError("x and about must be finite")
    scalar = x_arr.ndim == 0
    about = np.asarray(about, dtype=float)
    a = np.asarray(posterior_weight(x_arr, prior))
    if prior.alpha == 0.0:
        mean = np.zeros_like(x_arr)
        second = np.broadcast_to(about * about, x_arr.shape).copy()
    elif prior.slab.kind == LAPLACE:
        m1, m2 = _laplace_slab_moments(x_arr, prior.slab.scale)
        mean = a * m1
        second = (1.0 - a) * about * about + a * (m2 - 2.0 * about * m1 + about * about)
    else:
        if not scalar:
            raise ValueError("array input is supported for Laplace slabs only")
        m1, m2 = SlabComponent(float(x_arr), prior.slab).mean_and_second_moment()
        mean = a * m1
        second = (1.0 - a) * about * about + a * (m2 - 2.0 * about * m1 + about * about)
    if scalar:
        return float(mean), float(second)
    return mean, second


def _laplace_slab_moments(x, lam):
    """Vectorized (E[U], E[U^2]) under G_x for a Laplace slab."""
    x = np.asarray(x, dtype=float)
    mp, mn = x - lam, x + lam
    w_pos = special.expit((-lam * x + special.log_ndtr(mp)) - (lam * x + special.log_ndtr(-mn)))
    hp = _ratio_phi_ndtr(mp)
    hn = _ratio_phi_ndtr(-mn)
    m1 = w_pos * (mp + hp) + (1.0 - w_pos) * (mn - hn)
    m2 = w_pos * (mp * mp + 1.0 + mp * hp) + (1.0 - w_pos) * (mn * mn + 1.0 - mn * hn)
    return m1, m2


def posterior_median(x: float, prior: SasPrior) -> float:
    """Median of the coordinate posterior (1 - a) delta_0 + a G_x; exactly 0
    whenever the spike plus the opposing slab tail holds half the mass."""
    if not (0.0 < prior.alpha < 1.0):
        raise ValueError("posterior median requires alpha in (0, 1)")
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    a = posterior_weight(x, prior)
    comp = SlabComponent(float(x), prior.slab)
    below = a * comp.cdf(0.0)
    if below > 0.5:
        return comp.quantile(0.5 / a)
    if below + (1.0 - a) >= 0.5:
        return 0.0
    return comp.quantile((0.5 - (1.0 - a)) / a)


def median_threshold(prior: SasPrior) -> float:
    """The thresholding point t(alpha): positive observations strictly above
    it get a nonzero posterior median, those at or below it get 0."""
    if not (0.0 < prior.alpha < 1.0):
        raise ValueError("threshold requires alpha in (0, 1)")

    def excess(x):
        a = posterior_weight(x, prior)
        return a * SlabComponent(float(x), prior.slab).prob_positive() - 0.5

    hi = 2.0
    while excess(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e4:
            raise RuntimeError("median threshold bracket not found")
    return float(optimize.brentq(excess, 0.0, hi, xtol=1e-10))


def sample_coordinate(x: float, prior: SasPrior, rng: np.random.Generator, size: Optional[int] = None):
    """Draw from the coordinate posterior: 0 with probability 1 - a(x), else
    a draw from G_x."""
    a = posterior_weight(x, prior)
    n = 1 if size is None else int(size)
    out = np.zeros(n)
    slab_mask = rng.random(n) < a
    k = int(slab_mask.sum())
    if k:
        out[slab_mask] = SlabComponent(float(x), prior.slab).sample(rng, size=k)
    return float(out[0]) if size is None else out


# ---------------------------------------------------------------------------
# Subset-selection priors and exact l-values via elementary symmetric
# polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsetSelectionPrior:
    """Hierarchical prior: dimension k with log-weights `dim_log_weights`
    (length n+1, unnormalized), support uniform among size-k subsets, slab
    values i.i.d. on the support."""

    dim_log_weights: np.ndarray
    slab: SlabSpec

    def __post_init__(self):
        w = np.asarray(self.dim_log_weights, dtype=float)
        object.__setattr__(self, "dim_log_weights", w)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("dim_log_weights must be a nonempty 1-d sequence")
        if not np.any(np.isfinite(w)):
            raise ValueError("dim_log_weights must be finite for at least one k")
        if np.any(np.isnan(w)) or np.any(w == np.inf):
            raise ValueError("dim_log_weights must not contain NaN or +inf")

    @property
    def n(self) -> int:
        return self.dim_log_weights.size - 1

    def expected_dimension(self) -> float:
        w = self.dim_log_weights - special.logsumexp(self.dim_log_weights)
        return float(np.sum(np.arange(w.size) * np.exp(w)))

    def default_k_max(self) -> int:
        return min(self.n, int(math.ceil(4.0 * self.expected_dimension() + 50.0)))


def _esp_log(log_r: np.ndarray, k_max: int) -> np.ndarray:
    """log e_k(r_1..r_m) for k = 0..k_max, elementary symmetric polynomials
    of the exponentiated inputs, by the standard one-new-element recursion."""
    le = np.full(k_max + 1, -np.inf)
    le[0] = 0.0
    for lr in log_r:
        le[1:] = np.logaddexp(le[1:], le[:-1] + lr)
    return le


def _esp_deflate(le: np.ndarray, log_ri: float) -> Optional[np.ndarray]:
    """Leave-one-out ESPs from e_k(r) via e_k(r_-i) = e_k - r_i e_{k-1}(r_-i).

    Each marginal subtraction amplifies earlier rounding error by 1/rest,
    where rest is the surviving fraction; returns None once the cumulative
    amplification could cost more than ~6 significant digits, signalling the
    caller to recompute from scratch.
    """
    k_max = le.size - 1
    lo = np.full(k_max + 1, -np.inf)
    lo[0] = 0.0
    amplification = 1.0
    for k in range(1, k_max + 1):
        b = log_ri + lo[k - 1]
        a = le[k]
        if b == -np.inf:
            lo[k] = a
            continue
        d = b - a
        if d > -1e-15:  # e_k <= r_i e_{k-1}(r_-i): pure cancellation
            return None
        rest = -math.expm1(d)
        amplification /= rest
        if amplification > 1e6:
            return None
        lo[k] = a + math.log(rest)
    return lo


def subset_selection_l_values(x, prior: SubsetSelectionPrior, k_max: Optional[int] = None) -> np.ndarray:
    """Exact l-values l_i = P(theta_i = 0 | X) under a subset-selection prior.

    The posterior over supports factorizes through the per-coordinate
    marginal ratios r_i = g(x_i)/phi(x_i); summing it over all supports of
    each size reduces to elementary symmetric polynomials of the r_i, and
    excluding coordinate i to their leave-one-out versions.  Total cost is
    O(n k_max) in log space, so overflow is impossible.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    n = x.size
    if prior.n != n:
        raise ValueError(f"prior describes n={prior.n} coordinates, data has {n}")
    if k_max is None:
        k_max = prior.default_k_max()
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    k_max = min(k_max, n)

    log_r = np.asarray(ConvolvedMarginal(prior.slab).log_ratio(x))
    # pi~(k) = pi_n(k) / C(n, k); only k = 0..k_max carry weight
    ks = np.arange(k_max + 1)
    log_binom = special.gammaln(n + 1) - special.gammaln(ks + 1) - special.gammaln(n - ks + 1)
    log_wt = prior.dim_log_weights[: k_max + 1] - log_binom

    le = _esp_log(log_r, k_max)
    log_den = special.logsumexp(log_wt + le)

    k_loo = min(k_max, n - 1)
    out = np.empty(n)
    for i in range(n):
        lo = _esp_deflate(le, log_r[i])
        if lo is None:
            mask = np.ones(n, dtype=bool)
            mask[i] = False
            lo = _esp_log(log_r[mask], k_max)
        log_num = special.logsumexp(log_wt[: k_loo + 1] + lo[: k_loo + 1])
        out[i] = math.exp(min(0.0, log_num - log_den))
    return out
