"""Monte Carlo verification of the prior's limiting behavior and of the PG
sampler, emitted as line-delimited check records for the `verify` command.

Each record carries: check name, estimate, oracle (when one exists),
standard error, and a pass flag at the 3-standard-error level.
"""

import json

import numpy as np

from .kernels import KernelSpec
from .pg import pg_mean, pg_var, sample_pg_vec
from .prior import (
    PriorParams,
    delta_p,
    expected_common_features,
    joint_prob_D_grid,
    limit_moments,
    simulate_prior,
)

__all__ = ["run_verification", "prior_feature_curves", "write_report"]


def _record(name, estimate, oracle, se, passed, **extra):
    rec = {
        "type": "check",
        "check": name,
        "estimate": float(estimate),
        "oracle": None if oracle is None else float(oracle),
        "se": float(se),
        "pass": bool(passed),
    }
    rec.update(extra)
    return rec


def check_pg_moments(rng, n_draws=100_000):
    records = []
    for b, c in ((1.0, 0.0), (1.0, 2.0), (3.5, 1.7)):
        x = sample_pg_vec(np.full(n_draws, b), np.full(n_draws, c), rng)
        target = pg_mean(b, c)
        se = np.sqrt(pg_var(b, c) / n_draws)
        records.append(
            _record(
                f"pg_mean(b={b},c={c})",
                x.mean(),
                target,
                se,
                abs(x.mean() - target) <= 3 * se,
            )
        )
    x = sample_pg_vec(np.ones(n_draws), np.zeros(n_draws), rng)
    v = x.var(ddof=1)
    m4 = np.mean((x - x.mean()) ** 4)
    se_v = np.sqrt(max(m4 - v**2, 0.0) / n_draws)
    records.append(
        _record(
            "pg_var(b=1,c=0)",
            v,
            1.0 / 24.0,
            se_v,
            abs(v - 1.0 / 24.0) <= 3 * se_v,
        )
    )
    return records


def check_feature_count_moments(rng, mu=0.0, tau=1.0, K=200, n_rep=10_000):
    """Prior simulation vs the limiting feature-count mean and variance."""
    params = PriorParams(
        mu=mu, tau=tau, kernel=KernelSpec("exponential", phi=0.5), K=K
    )
    site = np.zeros((1, 2))
    counts = np.empty(n_rep)
    for r in range(n_rep):
        counts[r] = simulate_prior(site, params, rng).Z.sum()
    mean_lim, var_lim = limit_moments(mu, tau)
    se_mean = counts.std(ddof=1) / np.sqrt(n_rep)
    v = counts.var(ddof=1)
    m4 = np.mean((counts - counts.mean()) ** 4)
    se_var = np.sqrt(max(m4 - v**2, 0.0) / n_rep)
    return [
        _record(
            "feature_count_mean",
            counts.mean(),
            mean_lim,
            se_mean,
            abs(counts.mean() - mean_lim) <= 3 * se_mean,
        ),
        _record(
            "feature_count_var",
            v,
            var_lim,
            se_var,
            abs(v - var_lim) <= 3 * se_var,
        ),
    ]


def check_joint_probability(rng, mu=0.0, tau=1.0, n_mc=1_000_000):
    """D(rho) monotone on a grid and bracketed by delta_1^2 and delta_2."""
    rhos = np.linspace(0.1, 0.9, 9)
    est, se, step_mean, step_se = joint_prob_D_grid(rhos, mu, tau, n_mc, rng)
    d1 = delta_p(1, mu, tau)
    d2 = delta_p(2, mu, tau)
    records = []
    monotone = bool(np.all(step_mean >= -3 * step_se))
    records.append(
        _record("joint_prob_monotone", step_mean.min(), None, step_se.max(), monotone)
    )
    lo_ok = bool(np.all(est >= d1 * d1 - 3 * se))
    hi_ok = bool(np.all(est <= d2 + 3 * se))
    records.append(
        _record("joint_prob_bracket_low", est.min(), d1 * d1, se.max(), lo_ok)
    )
    records.append(
        _record("joint_prob_bracket_high", est.max(), d2, se.max(), hi_ok)
    )
    return records


def check_feature_ordering(rng, n=100, n_mc=400, phi=0.5, tau=1.0, K=60):
    """E[K*] increases with the level parameter at a fixed site layout."""
    coords = rng.uniform(0.0, 1.0, (n, 2))
    kernel = KernelSpec("exponential", phi=phi)
    results = {}
    for mu in (-1.0, 0.0, 1.0):
        params = PriorParams(mu=mu, tau=tau, kernel=kernel, K=K)
        results[mu] = expected_common_features(coords, params, n_mc, rng)
    records = []
    for lo, hi in ((-1.0, 0.0), (0.0, 1.0)):
        gap = results[hi][0] - results[lo][0]
        se = np.hypot(results[hi][1], results[lo][1])
        records.append(
            _record(
                f"feature_ordering(mu={lo}->mu={hi})",
                gap,
                None,
                se,
                gap > 3 * se,
                mu_low=lo,
                mu_high=hi,
            )
        )
    return records


def prior_feature_curves(rng, ns=(20, 50, 100, 200), mus=(-1.0, 0.0, 1.0),
                         tau=1.0, phi=0.5, K=60, n_mc=300):
    """E[K*] as a function of sample size for each level parameter."""
    records = []
    for n in ns:
        coords = rng.uniform(0.0, 1.0, (n, 2))
        for mu in mus:
            params = PriorParams(
                mu=mu, tau=tau, kernel=KernelSpec("exponential", phi=phi), K=K
            )
            est, se = expected_common_features(coords, params, n_mc, rng)
            records.append(
                {
                    "type": "curve",
                    "check": "expected_common_features",
                    "n": int(n),
                    "mu": float(mu),
                    "tau": float(tau),
                    "phi": float(phi),
                    "estimate": float(est),
                    "se": float(se),
                }
            )
    return records


def run_verification(seed=0, quick=False, curves=False):
    """All prior/PG checks; ``quick`` shrinks the Monte Carlo budgets."""
    rng = np.random.default_rng(seed)
    scale = 10 if quick else 1
    records = []
    records += check_pg_moments(rng, n_draws=100_000 // scale)
    records += check_feature_count_moments(rng, n_rep=10_000 // scale)
    records += check_joint_probability(rng, n_mc=1_000_000 // scale)
    records += check_feature_ordering(rng, n_mc=max(400 // scale, 100))
    if curves:
        records += prior_feature_curves(rng, n_mc=max(300 // scale, 100))
    return records


def write_report(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
