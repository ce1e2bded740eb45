"""Joint-distribution ("getting it right") harness for the Gibbs sampler.

Two ways of sampling from the joint law of (parameters, latents, data):

* marginal-conditional: parameters and latents from the prior, data from
  the likelihood — independent draws;
* successive-conditional: alternate one full posterior Gibbs sweep with a
  redraw of the data given the current latents and parameters.

If every full conditional is correct the two produce identical joint
distributions, so the moments of any statistic must agree.  Chain-side
standard errors come from batch means to absorb autocorrelation.
"""

import numpy as np

from sibp.gibbs import GibbsSampler


def scalar_stats(state, model):
    """The monitored statistics: mu, tau, free params, and z indicators."""
    vals = [state.mu, state.tau]
    snap = model.snapshot()
    if "eta" in snap and snap["eta"].ndim == 2:  # multinomial: skip pinned l=0
        vals.extend(snap["eta"][:, 1:].ravel())
        vals.extend(snap["theta"][:, :, 1:].ravel())
    else:
        vals.extend(np.atleast_1d(snap["eta"]).ravel())
        vals.extend(snap["theta"].ravel())
        vals.extend(snap["nu"].ravel())
    vals.extend(state.Z.ravel().astype(float))
    return np.array(vals, dtype=float)


def forward_sample(sampler, rng, n_rep):
    """Independent draws of the statistics under the generative model."""
    out = []
    for _ in range(n_rep):
        state = sampler.initial_state(rng)
        sampler.model.resample_data(state.Z, rng)
        out.append(scalar_stats(state, sampler.model))
    return np.array(out)


def successive_sample(sampler, rng, n_iter, thin=1):
    """Alternate posterior sweeps with data redraws; record every draw."""
    state = sampler.initial_state(rng)
    sampler.model.resample_data(state.Z, rng)
    out = []
    for it in range(n_iter):
        sampler.sweep(state, rng, adapt=False)
        sampler.model.resample_data(state.Z, rng)
        if it % thin == 0:
            out.append(scalar_stats(state, sampler.model))
    return np.array(out)


def batch_means_se(samples, n_batches=50):
    """Standard error of the mean of an autocorrelated sequence."""
    n = samples.shape[0]
    usable = (n // n_batches) * n_batches
    batches = samples[:usable].reshape(n_batches, -1, samples.shape[1]).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


def compare_moments(forward, chain, n_batches=50):
    """Z-scores of first- and second-moment differences, forward vs chain."""
    rows = []
    for power in (1, 2):
        f = forward**power
        c = chain**power
        se_f = f.std(axis=0, ddof=1) / np.sqrt(f.shape[0])
        se_c = batch_means_se(c, n_batches)
        se = np.sqrt(se_f**2 + se_c**2)
        diff = f.mean(axis=0) - c.mean(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(se > 0, diff / se, 0.0)
        rows.append(z)
    return np.array(rows)


def run_geweke(model_factory, coords, kernel, config, n_forward, n_chain,
               seed=0, n_batches=50):
    """Build twin samplers and return the moment z-score matrix (2, n_stats)."""
    rng_f = np.random.default_rng(seed)
    rng_c = np.random.default_rng(seed + 1)
    sampler_f = GibbsSampler(model_factory(rng_f), coords, kernel, config)
    forward = forward_sample(sampler_f, rng_f, n_forward)
    sampler_c = GibbsSampler(model_factory(rng_c), coords, kernel, config)
    chain = successive_sample(sampler_c, rng_c, n_chain)
    return compare_moments(forward, chain, n_batches=n_batches)
