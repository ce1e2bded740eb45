"""Posterior prediction at unobserved sites and the evaluation metrics.

Prediction threads each kept draw through the latent-field conditionals:
given a draw's (U, mu, tau, psi), the field value at a new site is normal
per factor column, the stick products give presence probabilities, and a
fresh Bernoulli draw gives the site's indicator row.  Averaging across
draws yields presence probabilities and observation-scale summaries.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .kernels import (
    EXCHANGEABLE,
    as_coords,
    build_correlation_from_distances,
    correlation,
    pairwise_distances,
)
from .multinomial import MultinomialModel
from .negbin import NegBinModel

__all__ = [
    "FactorPrediction",
    "predict_factors",
    "rand_index",
    "prediction_mse",
    "dic",
    "rebuild_model",
]


@dataclass
class FactorPrediction:
    """Per-site factor presence probabilities and observation-scale means."""

    coords: np.ndarray  # (m, 2)
    presence: np.ndarray  # (m, K)
    response: np.ndarray | None  # (m, M, L) probabilities or (m, M) intensities


def rebuild_model(chain, data):
    """Reconstruct an observation model of the chain's kind around ``data``."""
    meta = chain.model_meta
    if chain.model_kind == "multinomial":
        from .multinomial import MultinomialData

        if not isinstance(data, MultinomialData):
            data = MultinomialData(data, c=np.asarray(meta["c"]))
        return MultinomialModel(
            data, chain.K, gamma0=meta["gamma0"], gamma=np.asarray(meta["gamma"])
        )
    if chain.model_kind == "negbin":
        from .negbin import CountData

        if not isinstance(data, CountData):
            data = CountData(data)
        return NegBinModel(
            data,
            chain.K,
            gamma0=meta["gamma0"],
            gamma=np.asarray(meta["gamma"]),
            a_nu=meta["a_nu"],
            b_nu=meta["b_nu"],
        )
    raise ValueError(f"unknown model kind {chain.model_kind!r}")


def predict_factors(new_sites, chain, rng, model=None, response=True):
    """Sample factor indicators at new sites under every kept draw.

    Requires the chain to have stored its latent field draws
    (``store_u=True`` at fit time).  When ``response`` is set and a model
    is given (or reconstructible isn't needed because params are in the
    chain), observation-scale means are averaged as well.
    """
    if "U" not in chain.draws:
        raise ValueError(
            "chain has no stored latent fields; rerun the fit with store_u=True"
        )
    new = as_coords(new_sites)
    n_new = new.shape[0]
    D = chain.n_draws
    K = chain.K
    presence = np.zeros((n_new, K))
    resp_sum = None
    exchangeable = chain.kernel_family == EXCHANGEABLE
    if model is None and response:
        model = _model_shell(chain)
    cross = None
    D_train = None
    if not exchangeable:
        cross = np.linalg.norm(
            new[:, None, :] - chain.coords[None, :, :], axis=2
        )
        D_train = pairwise_distances(chain.coords)
    for d in range(D):
        U = chain.draws["U"][d]
        mu = chain.draws["mu"][d]
        tau = chain.draws["tau"][d]
        if exchangeable:
            u_new = np.broadcast_to(U[0], (n_new, K)).copy()
        else:
            spec = chain.kernel_spec(chain.draws["psi"][d])
            corr = build_correlation_from_distances(D_train, spec)
            C = correlation(cross, spec)  # (n_new, n)
            sol_u = corr.solve(U - mu)  # (n, K)
            means = mu + C @ sol_u  # (n_new, K)
            sol_c = corr.solve(C.T)  # (n, n_new)
            var = np.maximum((1.0 - np.einsum("mn,nm->m", C, sol_c)) / tau, 0.0)
            u_new = means + np.sqrt(var)[:, None] * rng.standard_normal((n_new, K))
        v = np.cumprod(expit(u_new), axis=1)
        z_new = (rng.random((n_new, K)) < v).astype(np.int8)
        presence += z_new
        if response and model is not None:
            _restore_draw(model, chain, d)
            for j in range(n_new):
                r = model.mean_response(z_new[j])
                if resp_sum is None:
                    resp_sum = np.zeros((n_new,) + r.shape)
                resp_sum[j] += r
    presence /= D
    resp = resp_sum / D if resp_sum is not None else None
    return FactorPrediction(coords=new, presence=presence, response=resp)


def _model_shell(chain):
    """A parameter-only model instance (dummy data) for mean_response calls."""
    meta = chain.model_meta
    if chain.model_kind == "multinomial":
        from .multinomial import MultinomialData

        c = np.asarray(meta["c"])
        x = np.zeros((1, len(c)), dtype=int)
        return rebuild_model(chain, MultinomialData(x, c=c))
    from .negbin import CountData

    M = chain.draws["eta"].shape[1]
    return rebuild_model(chain, CountData(np.zeros((1, M), dtype=int)))


def _restore_draw(model, chain, d):
    snap = {
        key: chain.draws[key][d]
        for key in ("eta", "theta", "nu")
        if key in chain.draws
    }
    model.restore(snap)


def rand_index(a, b):
    """Pair-counting agreement of two binary partitions of the same items."""
    a = np.asarray(a).astype(int).ravel()
    b = np.asarray(b).astype(int).ravel()
    if a.shape != b.shape:
        raise ValueError("partitions must have equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two items")
    if not (np.isin(a, (0, 1)).all() and np.isin(b, (0, 1)).all()):
        raise ValueError("partitions must be binary")
    n11 = int(np.sum((a == 1) & (b == 1)))
    n10 = int(np.sum((a == 1) & (b == 0)))
    n01 = int(np.sum((a == 0) & (b == 1)))
    n00 = int(np.sum((a == 0) & (b == 0)))
    same_cell = sum(m * (m - 1) // 2 for m in (n11, n10, n01, n00))
    diff_both = n11 * n00 + n10 * n01
    return (same_cell + diff_both) / (n * (n - 1) // 2)


def prediction_mse(estimated, truth):
    """Total squared probability error per (test site x feature)."""
    estimated = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimated.shape != truth.shape:
        raise ValueError(
            f"shape mismatch: {estimated.shape} vs {truth.shape}"
        )
    n_test, M = estimated.shape[:2]
    return float(np.sum((estimated - truth) ** 2) / (n_test * M))


def dic(chain, model):
    """Deviance information criterion D-bar + p_D.

    The plug-in deviance evaluates at the posterior means of the continuous
    parameters and the componentwise posterior mode of the binary matrix
    (presence probability thresholded at 0.5).
    """
    D = chain.n_draws
    deviances = np.empty(D)
    saved = model.snapshot()
    for d in range(D):
        _restore_draw(model, chain, d)
        deviances[d] = -2.0 * model.total_loglik(chain.draws["Z"][d])
    mean_params = {
        key: chain.draws[key].mean(axis=0)
        for key in ("eta", "theta", "nu")
        if key in chain.draws
    }
    model.restore(mean_params)
    z_mode = (chain.presence_probabilities() > 0.5).astype(np.int8)
    d_hat = -2.0 * model.total_loglik(z_mode)
    model.restore(saved)
    d_bar = float(deviances.mean())
    p_d = d_bar - d_hat
    return d_bar + p_d
