"""Configuration-driven experiment runner.

Each subcommand reproduces one family of desk-scale simulations and writes a
fixed-header CSV (byte-identical for identical config and seed) plus a JSON
summary with the config echo and environment stamp.  Exit codes: 0 success,
2 config error, 3 numerical failure.

Config files are flat ``key = value`` text with ``#`` comments; every key can
also be passed as ``--key value`` on the command line, which takes
precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy

from . import __version__
from ._rng import replicate_rng
from .conjugate_sequence import FunctionalSpec, coverage_mc, risk_terms, SeriesPrior
from .distributions import NoiseModel, SlabSpec, oracle_threshold
from .empirical_bayes import MarginalLikelihood, beta_binomial_dim_prior, mmle
from .multiple_testing import (
    BhSpec,
    LValueSpec,
    MmleWeight,
    NeverRejectSpec,
    OracleSpec,
    SignalConfig,
    bayes_fdr_mc,
    bayes_lower_bound_mrho,
    lambda_boundary,
    rho_admissible_max,
    risk_mc,
)
from .sas_posterior import SasPrior
from .vb_regression import (
    OptimizationError,
    RegressionPrior,
    cavi_fit,
    enumeration_oracle,
    generate_design,
    simulate_instance,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    """Invalid or missing configuration; message names the field."""


@dataclass(frozen=True)
class Field:
    name: str
    parse: Callable[[str], object]
    default: object = None
    required: bool = False
    choices: Optional[tuple] = None


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes"):
        return True
    if s.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in s.split(",") if tok.strip() != "")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in s.split(",") if tok.strip() != "")


def _parse_dots(s: str) -> tuple[tuple[float, float], ...]:
    """Two-group dots 'M:m;M:m;...'."""
    dots = []
    for tok in s.split(";"):
        tok = tok.strip()
        if not tok:
            continue
        hi, lo = tok.split(":")
        dots.append((float(hi), float(lo)))
    return tuple(dots)


def read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def resolve_params(schema: list[Field], file_cfg: dict[str, str], overrides: dict[str, str]) -> dict:
    known = {f.name for f in schema}
    for key in file_cfg:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    params = {}
    for f in schema:
        raw = overrides.get(f.name, file_cfg.get(f.name))
        if raw is None:
            if f.required:
                raise ConfigError(f"missing required field {f.name!r}")
            params[f.name] = f.default
            continue
        try:
            val = f.parse(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"field {f.name!r}: cannot parse {raw!r} ({exc})") from exc
        if f.choices is not None and val not in f.choices:
            raise ConfigError(f"field {f.name!r}: {val!r} not one of {f.choices}")
        params[f.name] = val
    return params


def _noise_from(params) -> NoiseModel:
    if params["noise"] == "gaussian":
        return NoiseModel.gaussian()
    return NoiseModel.subbotin(params["zeta"])


def _slab_from(params) -> SlabSpec:
    return SlabSpec(params["slab"], params["slab_scale"])


# ---------------------------------------------------------------------------
# Experiment definitions: schema, validate, run
# ---------------------------------------------------------------------------

_COMMON = [
    Field("seed", int, default=1),
    Field("reps", int, default=100),
    Field("workers", int, default=0),  # 0 -> all available cores
]

_NOISE_FIELDS = [
    Field("noise", str, default="gaussian", choices=("gaussian", "subbotin")),
    Field("zeta", float, default=1.5),
]

_SLAB_FIELDS = [
    Field("slab", str, default="laplace", choices=("laplace", "cauchy")),
    Field("slab_scale", float, default=1.0),
]


def _validate_common(params, errors, warnings_out):
    if params["reps"] < 1:
        errors.append("reps: must be >= 1")
    if params["workers"] < 0:
        errors.append("workers: must be >= 1 (or 0 for all cores)")
    if params["workers"] == 0:
        params["workers"] = os.cpu_count() or 1


class RiskBoundaryExperiment:
    """FDR/FNR/risk of a procedure on fixed-magnitude sparse signals, over a
    grid of boundary offsets b or two-group (hi:lo) dots."""

    name = "risk-boundary"
    header = ["experiment", "n", "s", "b", "procedure", "t", "level", "metric",
              "estimate", "std_error", "target", "replicates"]
    schema = _COMMON + _NOISE_FIELDS + _SLAB_FIELDS + [
        Field("n", int, required=True),
        Field("s", int, required=True),
        Field("b_grid", _parse_floats, default=()),
        Field("dots", _parse_dots, default=()),
        Field("q_frac", float, default=0.5),
        Field("procedure", str, default="oracle",
              choices=("oracle", "eb-lvalue", "lvalue", "bh", "never")),
        Field("alpha", float, default=0.1),
        Field("t", float, default=0.5),
        Field("level", float, default=0.1),
        Field("sign_policy", str, default="random", choices=("random", "positive")),
    ]

    @staticmethod
    def validate(params):
        errors, warns = [], []
        _validate_common(params, errors, warns)
        if params["n"] <= params["s"] or params["s"] < 1:
            errors.append("s: need 0 < s < n")
            return errors, warns
        if not params["b_grid"] and not params["dots"]:
            errors.append("b_grid: provide b_grid or dots")
        noise = _noise_from(params)
        a_star = oracle_threshold(params["n"], params["s"], noise)
        for b in params["b_grid"]:
            if a_star + b <= 0.0:
                errors.append(f"b_grid: b={b} violates class membership (a*+b must be > 0)")
        for hi, lo in params["dots"]:
            if a_star + min(hi, lo) <= 0.0:
                errors.append(f"dots: ({hi},{lo}) violates class membership (a*+b must be > 0)")
        if params["procedure"] == "lvalue" and not (0.0 < params["alpha"] < 1.0):
            errors.append("alpha: must be in (0, 1) for the fixed-weight procedure")
        if params["procedure"] in ("lvalue", "eb-lvalue") and not (0.0 < params["t"] < 1.0):
            errors.append("t: must be in (0, 1)")
        if params["procedure"] == "bh" and not (0.0 < params["level"] < 1.0):
            errors.append("level: must be in (0, 1)")
        if not (0.0 < params["q_frac"] < 1.0) and params["dots"]:
            errors.append("q_frac: must be in (0, 1)")
        return errors, warns

    @staticmethod
    def run(params, writer):
        noise = _noise_from(params)
        slab = _slab_from(params)
        n, s = params["n"], params["s"]
        if params["procedure"] == "oracle":
            spec = OracleSpec()
        elif params["procedure"] == "eb-lvalue":
            spec = LValueSpec(MmleWeight(slab), params["t"])
        elif params["procedure"] == "lvalue":
            spec = LValueSpec(SasPrior(params["alpha"], slab), params["t"])
        elif params["procedure"] == "bh":
            spec = BhSpec(params["level"])
        else:
            spec = NeverRejectSpec()

        points: list[tuple[str, np.ndarray]] = []
        for b in params["b_grid"]:
            points.append((repr(float(b)), np.full(s, float(b))))
        q = params["q_frac"]
        for hi, lo in params["dots"]:
            k_hi = int(math.floor(s * q))
            vec = np.concatenate([np.full(k_hi, hi), np.full(s - k_hi, lo)])
            points.append((f"{hi!r}/{lo!r}", vec))

        for label, b_vec in points:
            config = SignalConfig(n=n, s=s, b_vector=b_vec, noise=noise,
                                  sign_policy=params["sign_policy"])
            est = risk_mc(config, spec, params["reps"], params["seed"], params["workers"])
            target = lambda_boundary(b_vec, noise)
            for metric in ("fdr", "fnr", "risk", "classification"):
                r = est[metric]
                writer(
                    [RiskBoundaryExperiment.name, n, s, label, params["procedure"],
                     repr(params["t"]), repr(params["level"]), metric,
                     repr(r.mean), repr(r.mc_std_error), repr(target), r.replicates]
                )
        return {}


class LowerBoundExperiment:
    """Block-prior Bayes lower-bound statistic M_rho / s."""

    name = "lower-bound"
    header = ["experiment", "n", "s", "b", "rho", "metric", "estimate",
              "std_error", "target", "replicates"]
    schema = _COMMON + _NOISE_FIELDS + [
        Field("n", int, required=True),
        Field("s", int, required=True),
        Field("b", float, default=0.0),
        Field("rho", float, default=0.0),  # 0 -> auto select
    ]

    @staticmethod
    def validate(params):
        errors, warns = [], []
        _validate_common(params, errors, warns)
        if params["n"] <= params["s"] or params["s"] < 1:
            errors.append("s: need 0 < s < n")
            return errors, warns
        noise = _noise_from(params)
        if oracle_threshold(params["n"], params["s"], noise) + params["b"] <= 0.0:
            errors.append("b: class membership requires a* + b > 0")
        rho = params["rho"]
        if rho and rho < 1.0:
            errors.append("rho: must be >= 1 (or 0 for automatic)")
        if rho:
            rho_max = rho_admissible_max(params["n"], params["s"], noise)
            if rho > rho_max:
                warns.append(f"rho={rho} above the admissible window (max {rho_max:.3f}); proceeding")
        return errors, warns

    @staticmethod
    def run(params, writer):
        noise = _noise_from(params)
        n, s, b = params["n"], params["s"], params["b"]
        rho = params["rho"]
        if not rho:
            # the largest integer rho suggested by the admissibility analysis,
            # floored at the minimal legal value 1
            a_star = oracle_threshold(n, s, noise)
            delta = math.log(n / s) ** -0.25
            rho = max(1.0, math.floor((n / (3.0 * s)) * float(noise.survival(a_star - delta))))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = bayes_lower_bound_mrho(n, s, b, rho, params["reps"], params["seed"],
                                         noise, params["workers"])
        target = float(noise.survival(b))
        writer([LowerBoundExperiment.name, n, s, repr(b), repr(rho), "m_rho_over_s",
                repr(est.mean), repr(est.mc_std_error), repr(target), est.replicates])
        return {"rho_used": rho}


class BayesFdrExperiment:
    """Bayesian FDR of the fixed-weight l-value procedure under its own prior."""

    name = "bayes-fdr"
    header = ["experiment", "n", "alpha", "slab", "slab_scale", "t", "metric",
              "estimate", "std_error", "target", "replicates"]
    schema = _COMMON + _SLAB_FIELDS + [
        Field("n", int, required=True),
        Field("alpha", float, required=True),
        Field("t_grid", _parse_floats, default=(0.1, 0.3, 0.5)),
    ]

    @staticmethod
    def validate(params):
        errors, warns = [], []
        _validate_common(params, errors, warns)
        if params["n"] < 1:
            errors.append("n: must be >= 1")
        if not (0.0 < params["alpha"] < 1.0):
            errors.append("alpha: must be in (0, 1)")
        if not params["t_grid"] or any(not (0.0 < t < 1.0) for t in params["t_grid"]):
            errors.append("t_grid: levels must be in (0, 1)")
        return errors, warns

    @staticmethod
    def run(params, writer):
        prior = SasPrior(params["alpha"], _slab_from(params))
        ests = bayes_fdr_mc(params["n"], prior, params["t_grid"], params["reps"],
                            params["seed"], params["workers"])
        for t, est in zip(params["t_grid"], ests):
            writer([BayesFdrExperiment.name, params["n"], repr(params["alpha"]),
                    params["slab"], repr(params["slab_scale"]), repr(t), "bayes_fdr",
                    repr(est.mean), repr(est.mc_std_error), repr(t), est.replicates])
        return {}


class ContractionExperiment:
    """Closed-form risk decomposition of the conjugate series posterior over a
    sample-size grid, with the fitted log-log slope in the summary."""

    name = "contraction"
    header = ["experiment", "alpha_prior", "beta_truth", "n", "metric",
              "estimate", "std_error", "target", "replicates"]
    schema = _COMMON + [
        Field("alpha_prior", float, default=1.0),
        Field("beta_truth", float, default=1.0),
        Field("n_grid", _parse_ints, default=tuple(2**j for j in range(8, 17))),
    ]

    @staticmethod
    def validate(params):
        errors, warns = [], []
        _validate_common(params, errors, warns)
        if params["alpha_prior"] <= 0 or params["beta_truth"] <= 0:
            errors.append("alpha_prior: smoothness exponents must be > 0")
        if len(params["n_grid"]) < 2:
            errors.append("n_grid: need at least two sample sizes to fit a slope")
        return errors, warns

    @staticmethod
    def run(params, writer):
        a, bt = params["alpha_prior"], params["beta_truth"]
        totals = []
        for n in params["n_grid"]:
            prior = SeriesPrior(alpha_prior=a, K=int(n))
            k = np.arange(1, int(n) + 1, dtype=float)
            theta0 = k ** (-0.5 - bt)
            term_a, term_b = risk_terms(theta0, prior, int(n))
            totals.append(term_a + term_b)
            for metric, val in (("term_a", term_a), ("term_b", term_b), ("total", term_a + term_b)):
                writer([ContractionExperiment.name, repr(a), repr(bt), int(n), metric,
                        repr(val), repr(0.0), "", 1])
        slope = float(np.polyfit(np.log(params["n_grid"]), np.log(totals), 1)[0])
        expected = -2.0 * min(a, bt) / (2.0 * a + 1.0)
        return {"fitted_slope": slope, "expected_slope": expected}


class CoverageExperiment:
    """Coverage of shift-and-rescale tempered credible intervals for a linear
    functional of the signal."""

    name = "coverage"
    header = ["experiment", "beta", "mu", "gamma", "K", "n", "alpha_rule",
              "alpha_n", "delta", "metric", "estimate", "std_error", "target",
              "replicates"]
    schema = _COMMON + [
        Field("beta", float, default=1.5),
        Field("mu", float, default=1.5),
        Field("gamma", float, default=0.5),
        Field("n_grid", _parse_ints, default=(2**14,)),
        Field("K", int, default=0),  # 0 -> K = n
        Field("alpha_rule", str, default="one", choices=("one", "power")),
        Field("alpha_exponent", float, default=0.25),
        Field("delta", float, default=0.05),
    ]

    @staticmethod
    def validate(params):
        errors, warns = [], []
        _validate_common(params, errors, warns)
        if min(params["beta"], params["mu"], params["gamma"]) <= 0.0:
            errors.append("beta: exponents must be > 0")
        if not (0.0 < params["delta"] < 1.0):
            errors.append("delta: must be in (0, 1)")
        if params["alpha_rule"] == "power" and params["alpha_exponent"] <= 0.0:
            errors.append("alpha_exponent: must be > 0 for the power rule")
        return errors, warns

    @staticmethod
    def run(params, writer):
        expo = params["alpha_exponent"]
        if params["alpha_rule"] == "one":
            rule = lambda n: 1.0  # noqa: E731
        else:
            rule = lambda n: float(n) ** (-expo)  # noqa: E731
        rule_label = "one" if params["alpha_rule"] == "one" else f"n^-{expo!r}"
        for n in params["n_grid"]:
            K = params["K"] or int(n)
            spec = FunctionalSpec(params["beta"], params["mu"], params["gamma"], K)
            rows = coverage_mc(spec, [int(n)], rule, params["delta"], params["reps"], params["seed"])
            for row in rows:
                writer([CoverageExperiment.name, repr(params["beta"]), repr(params["mu"]),
                        repr(params["gamma"]), K, row["n"], rule_label, repr(row["alpha_n"]),
                        repr(params["delta"]), "coverage", repr(row["coverage"]),
                        repr(row["std_error"]), repr(1.0 - params["delta"]), params["reps"]])
        return {}


def _vb_field_schema(require_n: bool = True):
    return _COMMON + [
        Field("n", int, required=require_n, default=0),
        Field("p", int, required=True),
        Field("s", int, default=5),
        Field("signal", float, default=0.0),  # 0 -> 3 sqrt(2 log p)
        Field("u", float, default=2.0),
        Field("lam", float, default=1.0),
        Field("max_sweeps", int, default=500),
        Field("tol", float, default=1e-8),
    ]


def _vb_validate(params):
    errors, warns = [], []
    _validate_common(params, errors, warns)
    if params.get("n_grid") is None and (params["n"] < 1 or params["p"] < 1):
        errors.append("n: need n, p >= 1")
    elif params["p"] < 1:
        errors.append("p: need p >= 1")
    if not (0 <= params["s"] <= params["p"]):
        errors.append("s: need 0 <= s <= p")
    if params["u"] <= 1.0:
        warns.append("u <= 1 leaves the dimension prior only weakly sparsifying")
    if params["lam"] <= 0.0:
        errors.append("lam: slab rate must be > 0")
    return errors, warns


def _vb_setup(params, seed_index: int):
    p = params["p"]
    prior = RegressionPrior(beta_binomial_dim_prior(p, 1.0, float(p) ** params["u"]), params["lam"])
    signal = params["signal"] or 3.0 * math.sqrt(2.0 * math.log(p))
    design = generate_design(params["n"], p, seed=params["seed"] * 100_003 + seed_index)
    rng = replicate_rng(params["seed"], seed_index)
    theta0 = np.zeros(p)
    support = rng.choice(p, size=params["s"], replace=False)
    theta0[support] = signal * rng.choice([-1.0, 1.0], size=params["s"])
    instance = simulate_instance(design, theta0, rng)
    return prior, instance, theta0


class VbFitExperiment:
    """Single-configuration CAVI fits across seeds: final ELBO, monotonicity
    margin, l2 error, and selected support size."""

    name = "vb-fit"
    header = ["experiment", "n", "p", "s", "signal", "u", "lam", "seed_index",
              "metric", "estimate", "std_error", "target", "replicates"]
    schema = _vb_field_schema()
    validate = staticmethod(_vb_validate)

    @staticmethod
    def run(params, writer):
        for seed_index in range(params["reps"]):
            prior, instance, theta0 = _vb_setup(params, seed_index)
            state = cavi_fit(instance, prior, max_sweeps=params["max_sweeps"], tol=params["tol"])
            gains = np.diff(state.elbo_trace)
            metrics = {
                "elbo_final": float(state.elbo_trace[-1]),
                "min_sweep_gain": float(gains.min()) if gains.size else 0.0,
                "l2_error": float(np.linalg.norm(state.posterior_mean - theta0)),
                "support_size": float(np.sum(state.gamma > 0.5)),
                "sweeps": float(len(state.elbo_trace) - 1),
            }
            signal = params["signal"] or 3.0 * math.sqrt(2.0 * math.log(params["p"]))
            for metric, val in metrics.items():
                writer([VbFitExperiment.name, params["n"], params["p"], params["s"],
                        repr(signal), repr(params["u"]), repr(params["lam"]), seed_index,
                        metric, repr(val), repr(0.0), "", 1])
        return {}


class VbScalingExperiment:
    """Median l2 error of the variational posterior mean over a sample-size
    grid, with the fitted log-log slope in the summary."""

    name = "vb-scaling"
    header = ["experiment", "n", "p", "s", "signal", "u", "lam", "metric",
              "estimate", "std_error", "target", "replicates"]
    schema = _vb_field_schema(require_n=False) + [
        Field("n_grid", _parse_ints, default=(100, 200, 400, 800))
    ]
    validate = staticmethod(_vb_validate)

    @staticmethod
    def run(params, writer):
        medians = []
        signal = params["signal"] or 3.0 * math.sqrt(2.0 * math.log(params["p"]))
        for n in params["n_grid"]:
            sub = dict(params)
            sub["n"] = int(n)
            errs = []
            for seed_index in range(params["reps"]):
                prior, instance, theta0 = _vb_setup(sub, seed_index)
                state = cavi_fit(instance, prior, max_sweeps=params["max_sweeps"], tol=params["tol"])
                errs.append(float(np.linalg.norm(state.posterior_mean - theta0)))
            errs = np.asarray(errs)
            med = float(np.median(errs))
            medians.append(med)
            se = float(errs.std(ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else 0.0
            writer([VbScalingExperiment.name, int(n), params["p"], params["s"], repr(signal),
                    repr(params["u"]), repr(params["lam"]), "median_l2_error",
                    repr(med), repr(se), "", params["reps"]])
        slope = float(np.polyfit(np.log(params["n_grid"]), np.log(medians), 1)[0])
        return {"fitted_slope": slope, "expected_slope": -0.5}


class MmleExperiment:
    """Sampling distribution of the marginal-maximum-likelihood weight on
    fixed-magnitude sparse signals."""

    name = "mmle"
    header = ["experiment", "n", "s", "b", "slab", "slab_scale", "metric",
              "estimate", "std_error", "target", "replicates"]
    schema = _COMMON + _NOISE_FIELDS + _SLAB_FIELDS + [
        Field("n", int, required=True),
        Field("s", int, required=True),
        Field("b", float, default=0.0),
    ]

    @staticmethod
    def validate(params):
        errors, warns = [], []
        _validate_common(params, errors, warns)
        if params["n"] <= params["s"] or params["s"] < 1:
            errors.append("s: need 0 < s < n")
            return errors, warns
        noise = _noise_from(params)
        if oracle_threshold(params["n"], params["s"], noise) + params["b"] <= 0.0:
            errors.append("b: class membership requires a* + b > 0")
        return errors, warns

    @staticmethod
    def run(params, writer):
        noise = _noise_from(params)
        slab = _slab_from(params)
        config = SignalConfig(n=params["n"], s=params["s"], b_vector=np.full(params["s"], params["b"]),
                              noise=noise)
        alphas = np.empty(params["reps"])
        boundary = 0
        for rep in range(params["reps"]):
            rng = replicate_rng(params["seed"], rep)
            _, x = config.sample(rng)
            res = mmle(MarginalLikelihood(x, slab))
            alphas[rep] = res.alpha
            boundary += int(res.at_lower or res.at_upper)
        se = float(alphas.std(ddof=1) / math.sqrt(alphas.size)) if alphas.size > 1 else 0.0
        target = params["s"] / params["n"]
        writer([MmleExperiment.name, params["n"], params["s"], repr(params["b"]),
                params["slab"], repr(params["slab_scale"]), "alpha_hat_mean",
                repr(float(alphas.mean())), repr(se), repr(target), params["reps"]])
        writer([MmleExperiment.name, params["n"], params["s"], repr(params["b"]),
                params["slab"], repr(params["slab_scale"]), "boundary_fraction",
                repr(boundary / params["reps"]), repr(0.0), "", params["reps"]])
        return {}


EXPERIMENTS = {
    exp.name: exp
    for exp in (
        RiskBoundaryExperiment,
        LowerBoundExperiment,
        BayesFdrExperiment,
        ContractionExperiment,
        CoverageExperiment,
        VbFitExperiment,
        VbScalingExperiment,
        MmleExperiment,
    )
}


def validate(kind: str, params: dict) -> tuple[list[str], list[str]]:
    """Static validation of a resolved parameter dict: (hard errors,
    warnings)."""
    return EXPERIMENTS[kind].validate(params)


def run_experiment(kind: str, params: dict, out_path: str) -> dict:
    """Run one experiment and write <out>.csv and <out>.json."""
    exp = EXPERIMENTS[kind]
    rows: list[list] = []
    start = time.monotonic()
    extras = exp.run(params, rows.append)
    wall = time.monotonic() - start

    csv_path = out_path + ".csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(exp.header)
        w.writerows(rows)

    summary = {
        "experiment": kind,
        "config": {k: _jsonable(v) for k, v in sorted(params.items())},
        "seed": params["seed"],
        "library_version": __version__,
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "rows": len(rows),
        "wall_seconds": round(wall, 3),
    }
    summary.update(extras)
    with open(out_path + ".json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsebayes",
        description="Seeded desk-scale experiments for sparse Bayesian inference",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for name, exp in EXPERIMENTS.items():
        sp = sub.add_parser(name, help=exp.__doc__)
        sp.add_argument("--config", default=None, help="flat key = value config file")
        sp.add_argument("--out", required=False, default=None, help="output path stem (.csv/.json)")
        sp.add_argument("--dry-run", action="store_true", help="validate only")
        for f in exp.schema:
            sp.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    exp = EXPERIMENTS[args.kind]
    try:
        file_cfg = read_config_file(args.config) if args.config else {}
        overrides = {
            f.name: getattr(args, f.name)
            for f in exp.schema
            if getattr(args, f.name) is not None
        }
        params = resolve_params(exp.schema, file_cfg, overrides)
        errors, warns = validate(args.kind, params)
        for w in warns:
            print(f"warning: {w}", file=sys.stderr)
        if errors:
            for e in errors:
                print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        if args.dry_run:
            print("config ok", file=sys.stderr)
            return EXIT_OK
        if args.out is None:
            print("config error: missing required field 'out'", file=sys.stderr)
            return EXIT_CONFIG
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        summary = run_experiment(args.kind, params, args.out)
    except OptimizationError as exc:
        diag_path = args.out + ".diagnostic.json"
        with open(diag_path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "error": str(exc),
                    "experiment": args.kind,
                    "elbo_trace": [float(v) for v in exc.state.elbo_trace],
                    "gamma_sum": float(np.sum(exc.state.gamma)),
                },
                fh,
                indent=2,
            )
        print(f"numerical failure: {exc}; diagnostic state at {diag_path}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        diag_path = args.out + ".diagnostic.json"
        with open(diag_path, "w", encoding="utf-8") as fh:
            json.dump({"error": str(exc), "experiment": args.kind}, fh, indent=2)
        print(f"numerical failure: {exc}; diagnostic state at {diag_path}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
