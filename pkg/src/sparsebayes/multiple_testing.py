"""Multiple-testing and classification procedures on the sparse sequence
model, their FDR/FNR/classification losses, boundary functions, seeded
Monte Carlo risk estimation, and the block-prior Bayes lower bound."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ._rng import replicate_rng
from .distributions import ConvolvedMarginal, NoiseModel, SlabSpec, log_phi, oracle_threshold
from .empirical_bayes import MarginalLikelihood, mmle_alpha
from .sas_posterior import SasPrior, SubsetSelectionPrior, l_value, subset_selection_l_values

# A decision vector is a length-n array of 0/1 ints (1 = reject the i-th null).
DecisionVector = np.ndarray


@dataclass(frozen=True)
class LossReport:
    """Realized error counts and proportions of one decision vector against
    one truth; proportions use the max(1, .) denominator convention."""

    n_fp: int
    n_fn: int
    n_discoveries: int
    n_signals: int

    @property
    def fdp(self) -> float:
        return self.n_fp / max(1, self.n_discoveries)

    @property
    def fnp(self) -> float:
        return self.n_fn / max(1, self.n_signals)

    @property
    def classification_loss(self) -> int:
        return self.n_fp + self.n_fn


def losses(decisions: DecisionVector, theta) -> LossReport:
    """Count false positives/negatives of `decisions` against the support of
    `theta`."""
    decisions = np.asarray(decisions)
    theta = np.asarray(theta, dtype=float)
    if decisions.shape != theta.shape:
        raise ValueError("decisions and theta must have matching length")
    rej = decisions != 0
    sig = theta != 0.0
    return LossReport(
        n_fp=int(np.sum(rej & ~sig)),
        n_fn=int(np.sum(~rej & sig)),
        n_discoveries=int(np.sum(rej)),
        n_signals=int(np.sum(sig)),
    )


# ---------------------------------------------------------------------------
# Procedures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MmleWeight:
    """Prior source that estimates the spike-and-slab weight by marginal
    maximum likelihood over [1/n, 1] before computing l-values."""

    slab: SlabSpec


PriorSource = Union[SasPrior, MmleWeight, SubsetSelectionPrior]


def compute_l_values(x, source: PriorSource) -> np.ndarray:
    """Posterior null probabilities for the product (fixed or MMLE weight)
    and subset-selection cases."""
    x = np.asarray(x, dtype=float)
    if isinstance(source, SasPrior):
        return np.asarray(l_value(x, source))
    if isinstance(source, MmleWeight):
        alpha_hat = mmle_alpha(MarginalLikelihood(x, source.slab))
        return np.asarray(l_value(x, SasPrior(alpha_hat, source.slab)))
    if isinstance(source, SubsetSelectionPrior):
        return subset_selection_l_values(x, source)
    raise TypeError(f"unsupported prior source {type(source).__name__}")


def lvalue_procedure(x, source: PriorSource, t: float) -> DecisionVector:
    """Reject coordinate i iff its l-value is at most t."""
    if not (0.0 < t < 1.0):
        raise ValueError("t must be in (0, 1)")
    return (compute_l_values(x, source) <= t).astype(np.int8)


def q_value(x_i: float, prior: SasPrior) -> float:
    """Posterior null probability given the tail event {|X| >= |x_i|}:
    the two-group mixture weight of the null tail."""
    if not np.isfinite(x_i):
        raise ValueError("x_i must be finite")
    alpha = prior.alpha
    if alpha == 0.0:
        return 1.0
    if alpha == 1.0:
        return 0.0
    t = abs(float(x_i))
    noise_tail = 2.0 * float(NoiseModel.gaussian().survival(t))
    slab_tail = 2.0 * float(ConvolvedMarginal(prior.slab).survival(t))
    null_part = (1.0 - alpha) * noise_tail
    return null_part / (null_part + alpha * slab_tail)


def bh_procedure(x, level: float, noise: NoiseModel = NoiseModel.gaussian()) -> DecisionVector:
    """Two-sided p-values p_i = 2 F-bar(|x_i|) fed to the standard step-up
    rule: reject the k largest-ranked hypotheses where k is the largest index
    with p_(k) <= k level / n."""
    if not (0.0 < level < 1.0):
        raise ValueError("level must be in (0, 1)")
    x = np.asarray(x, dtype=float)
    n = x.size
    pvals = np.minimum(1.0, 2.0 * np.asarray(noise.survival(np.abs(x))))
    order = np.argsort(pvals, kind="stable")
    sorted_p = pvals[order]
    thresholds = level * np.arange(1, n + 1) / n
    passing = np.nonzero(sorted_p <= thresholds)[0]
    rej = np.zeros(n, dtype=np.int8)
    if passing.size:
        k_hat = passing[-1] + 1
        rej[order[:k_hat]] = 1
    return rej


def oracle_procedure(x, n: int, s: int, noise: NoiseModel = NoiseModel.gaussian()) -> DecisionVector:
    """Threshold |x_i| at the signal-detection level for sparsity s out of n."""
    thr = oracle_threshold(n, s, noise)
    return (np.abs(np.asarray(x, dtype=float)) > thr).astype(np.int8)


# Picklable procedure descriptors for parallel Monte Carlo runs.


@dataclass(frozen=True)
class OracleSpec:
    """Threshold at the oracle level; uses the config's (n, s, noise)."""


@dataclass(frozen=True)
class LValueSpec:
    source: PriorSource
    t: float


@dataclass(frozen=True)
class BhSpec:
    level: float


@dataclass(frozen=True)
class NeverRejectSpec:
    """Degenerate comparator that never rejects."""


ProcedureSpec = Union[OracleSpec, LValueSpec, BhSpec, NeverRejectSpec]


def apply_procedure(spec: ProcedureSpec, x, config: "SignalConfig") -> DecisionVector:
    if isinstance(spec, OracleSpec):
        return oracle_procedure(x, config.n, config.s, config.noise)
    if isinstance(spec, LValueSpec):
        return lvalue_procedure(x, spec.source, spec.t)
    if isinstance(spec, BhSpec):
        return bh_procedure(x, spec.level, config.noise)
    if isinstance(spec, NeverRejectSpec):
        return np.zeros(np.asarray(x).size, dtype=np.int8)
    raise TypeError(f"unsupported procedure spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Signal classes and Monte Carlo risk
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalConfig:
    """Sparse means with fixed magnitudes: s signals on a uniformly random
    support at heights a* + b_j, where a* is the oracle threshold.  Signs are
    Rademacher by default ('random') or all positive ('positive')."""

    n: int
    s: int
    b_vector: np.ndarray
    noise: NoiseModel = NoiseModel.gaussian()
    sign_policy: str = "random"

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b_vector, dtype=float))
        if b.size == 1:
            b = np.full(self.s, float(b[0]))
        object.__setattr__(self, "b_vector", b)
        if not (0 < self.s < self.n):
            raise ValueError("need 0 < s < n")
        if b.size != self.s:
            raise ValueError("b_vector must have length s (or be scalar)")
        if self.sign_policy not in ("random", "positive"):
            raise ValueError("sign_policy must be 'random' or 'positive'")
        a_star = oracle_threshold(self.n, self.s, self.noise)
        if np.any(a_star + b <= 0.0):
            raise ValueError("class membership requires a* + b_j > 0 for all j")

    @property
    def magnitudes(self) -> np.ndarray:
        return oracle_threshold(self.n, self.s, self.noise) + self.b_vector

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw (theta, x) with x = theta + noise."""
        theta = np.zeros(self.n)
        support = rng.choice(self.n, size=self.s, replace=False)
        mags = self.magnitudes
        if self.sign_policy == "random":
            mags = mags * rng.choice([-1.0, 1.0], size=self.s)
        theta[support] = mags
        x = theta + self.noise.sample(rng, self.n)
        return theta, x


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    mc_std_error: float
    replicates: int
    seed: int


def _mc_summary(values: np.ndarray, seed: int) -> RiskEstimate:
    values = np.asarray(values, dtype=float)
    r = values.size
    se = float(values.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0
    return RiskEstimate(float(values.mean()), se, r, int(seed))


def _risk_replicate(args) -> tuple[float, float, float]:
    config, spec, seed, rep = args
    rng = replicate_rng(seed, rep)
    theta, x = config.sample(rng)
    report = losses(apply_procedure(spec, x, config), theta)
    return report.fdp, report.fnp, report.classification_loss / config.s


def risk_mc(
    config: SignalConfig,
    spec: ProcedureSpec,
    replicates: int,
    seed: int,
    workers: int = 1,
) -> dict[str, RiskEstimate]:
    """Monte Carlo estimates of FDR, FNR, their sum, and the normalized
    classification risk for one procedure on one signal configuration.

    Replicate r uses the derived stream (seed, r); results are reduced in
    replicate order, so estimates are identical for any worker count.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    args = [(config, spec, seed, rep) for rep in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_risk_replicate, args, chunksize=max(1, replicates // (4 * workers))))
    else:
        rows = [_risk_replicate(a) for a in args]
    fdp, fnp, cls = (np.array(col) for col in zip(*rows))
    return {
        "fdr": _mc_summary(fdp, seed),
        "fnr": _mc_summary(fnp, seed),
        "risk": _mc_summary(fdp + fnp, seed),
        "classification": _mc_summary(cls, seed),
    }


# ---------------------------------------------------------------------------
# Boundary functions
# ---------------------------------------------------------------------------


def lambda_boundary(b_vector, noise: NoiseModel = NoiseModel.gaussian()) -> float:
    """Boundary value Lambda_n(b): the average upper survival of the signal
    offsets, the sharp limit of the minimax testing risk."""
    b = np.atleast_1d(np.asarray(b_vector, dtype=float))
    if b.size == 0:
        raise ValueError("b_vector must be nonempty")
    return float(np.mean(noise.survival(b)))


def kappa_tau(r: float, beta: float, n: int) -> tuple[float, float]:
    """Large-signal risk exponent kappa and the matching threshold tau:
    sqrt(kappa) = (sqrt(r) - beta/sqrt(r))/2, tau = (sqrt(r) - sqrt(kappa))
    sqrt(2 log n).  kappa vanishes at r = beta; r < beta is out of range."""
    if not (0.0 < beta <= 1.0):
        raise ValueError("beta must be in (0, 1]")
    if r < beta:
        raise ValueError("need r >= beta")
    sqrt_kappa = (math.sqrt(r) - beta / math.sqrt(r)) / 2.0
    kappa = sqrt_kappa**2
    tau = (math.sqrt(r) - sqrt_kappa) * math.sqrt(2.0 * math.log(n))
    return kappa, tau


# ---------------------------------------------------------------------------
# Block-prior lower bound
# ---------------------------------------------------------------------------


def block_prior_sample(
    n: int, s: int, b: float, noise: NoiseModel, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Least-favorable block prior draw: floor(n/s) * s coordinates split into
    s blocks, exactly one uniformly-placed signal of height a* + b per block,
    all other coordinates (including the remainder block) zero."""
    if not (0 < s < n):
        raise ValueError("need 0 < s < n")
    a = oracle_threshold(n, s, noise) + b
    if a <= 0.0:
        raise ValueError("block prior requires a* + b > 0")
    q = n // s
    theta = np.zeros(n)
    positions = np.arange(s) * q + rng.integers(0, q, size=s)
    theta[positions] = a
    x = theta + noise.sample(rng, n)
    return theta, x


def rho_admissible_max(n: int, s: int, noise: NoiseModel = NoiseModel.gaussian(), kappa: float = 0.25) -> float:
    """Upper end of the admissible window for the lower-bound parameter rho:
    (n / 2s) F-bar(a* - delta_n) - 1, with delta_n = log(n/s)^(-1/4) for
    Gaussian noise and log(n/s)^(-kappa) for Subbotin."""
    a_star = oracle_threshold(n, s, noise)
    expo = 0.25 if noise.kind == "gaussian" else kappa
    delta = math.log(n / s) ** (-expo)
    return float((n / (2.0 * s)) * noise.survival(a_star - delta) - 1.0)


def block_l_values(x, n: int, s: int, b: float, noise: NoiseModel = NoiseModel.gaussian()) -> np.ndarray:
    """Exact l-values of the first floor(n/s)*s coordinates under the block
    prior: one minus the within-block softmax of the likelihood ratios
    h(x, a) = f(x - a) / f(x) at signal height a = a* + b."""
    a = oracle_threshold(n, s, noise) + b
    q = n // s
    blocks = np.asarray(x, dtype=float)[: q * s].reshape(s, q)
    log_h = noise.log_density(blocks - a) - noise.log_density(blocks)
    log_h -= log_h.max(axis=1, keepdims=True)
    w = np.exp(log_h)
    w /= w.sum(axis=1, keepdims=True)
    return (1.0 - w).ravel()


def _mrho_replicate(args) -> float:
    n, s, b, rho, noise, seed, rep = args
    rng = replicate_rng(seed, rep)
    theta, x = block_prior_sample(n, s, b, noise, rng)
    q = n // s
    ell = block_l_values(x, n, s, b, noise)
    signal_idx = np.nonzero(theta[: q * s])[0]
    return float(np.mean(ell[signal_idx] > rho / (1.0 + rho)))


def bayes_lower_bound_mrho(
    n: int,
    s: int,
    b: float,
    rho: float,
    replicates: int,
    seed: int,
    noise: NoiseModel = NoiseModel.gaussian(),
    workers: int = 1,
) -> RiskEstimate:
    """Monte Carlo estimate of M_rho / s: under the block prior, the expected
    fraction of signal coordinates whose exact l-value exceeds rho/(1+rho).

    This is the quantity driving the Bayes risk lower bound; it approaches
    the noise survival at b as n grows.
    """
    if rho < 1.0:
        raise ValueError("rho must be >= 1")
    rho_max = rho_admissible_max(n, s, noise)
    if rho > rho_max:
        warnings.warn(
            f"rho={rho} exceeds the admissible window (max {rho_max:.3f}); "
            "the asymptotic guarantee may not apply",
            stacklevel=2,
        )
    args = [(n, s, b, rho, noise, seed, rep) for rep in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(_mrho_replicate, args, chunksize=max(1, replicates // (4 * workers))))
    else:
        vals = [_mrho_replicate(a) for a in args]
    return _mc_summary(np.array(vals), seed)


def sample_sas_theta(n: int, prior: SasPrior, rng: np.random.Generator) -> np.ndarray:
    """Draw theta from the product spike-and-slab prior (for Bayesian FDR
    simulations)."""
    theta = np.zeros(n)
    mask = rng.random(n) < prior.alpha
    k = int(mask.sum())
    if k:
        theta[mask] = prior.slab.sample(rng, k)
    return theta


def _bayes_fdr_replicate(args) -> tuple[float, ...]:
    n, prior, t_grid, seed, rep = args
    rng = replicate_rng(seed, rep)
    theta = sample_sas_theta(n, prior, rng)
    x = theta + rng.standard_normal(n)
    lv = compute_l_values(x, prior)
    sig = theta != 0.0
    out = []
    for t in t_grid:
        rej = lv <= t
        out.append(float(np.sum(rej & ~sig) / max(1, int(np.sum(rej)))))
    return tuple(out)


def bayes_fdr_mc(
    n: int,
    prior: SasPrior,
    t_grid: Sequence[float],
    replicates: int,
    seed: int,
    workers: int = 1,
) -> list[RiskEstimate]:
    """Bayesian FDR of the fixed-weight l-value procedure at each level t,
    averaging realized false-discovery proportions over draws of (theta, x)
    from the prior-predictive model."""
    for t in t_grid:
        if not (0.0 < t < 1.0):
            raise ValueError("levels must be in (0, 1)")
    args = [(n, prior, tuple(t_grid), seed, rep) for rep in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bayes_fdr_replicate, args, chunksize=max(1, replicates // (4 * workers))))
    else:
        rows = [_bayes_fdr_replicate(a) for a in args]
    cols = list(zip(*rows))
    return [_mc_summary(np.array(col), seed) for col in cols]
