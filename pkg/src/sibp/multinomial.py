"""Large-dimensional multinomial factor model.

Each of the M features is categorical on {0, ..., c_m - 1}; the category
logits combine a shared baseline with the effects of whichever factors the
subject possesses:

    pi_iml = softmax_l( eta_ml + sum_k z_ik theta_kml )

with eta_m0 = theta_km0 = 0 pinned for identifiability.  Parameter blocks
(eta_ml, theta_1ml, ..., theta_Kml) update one category at a time against
the rest via the logistic reduction: with

    C_iml = log sum_{l' != l} exp(z_i^T Theta_ml')

the block likelihood is logistic in z_i^T Theta_ml - C_iml, so a PG(1, .)
draw per subject yields a Gaussian full conditional.

Missing cells never enter the likelihood or the block updates; they are
re-imputed from the current category probabilities once per sweep so that
predictive summaries see a complete matrix.
"""

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.special import logsumexp

from .gibbs import NumericalAbort
from .pg import sample_pg_vec

__all__ = ["MISSING", "MultinomialData", "MultinomialModel"]

MISSING = -1


class MultinomialData:
    """An (n, M) categorical matrix with 0-based levels and -1 for missing."""

    def __init__(self, x, c=None):
        x = np.asarray(x, dtype=int)
        if x.ndim != 2:
            raise ValueError(f"expected an (n, M) matrix, got shape {x.shape}")
        if c is None:
            if (x < 0).all(axis=0).any():
                raise ValueError("cannot infer category counts from all-missing column")
            c = np.maximum(x.max(axis=0) + 1, 2)
        c = np.asarray(c, dtype=int)
        if (c < 2).any():
            raise ValueError("every feature needs at least 2 categories")
        observed = x >= 0
        if (x[observed] >= np.broadcast_to(c, x.shape)[observed]).any():
            raise ValueError("category level outside its feature's range")
        self.x = x
        self.c = c
        self.observed = observed

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def M(self):
        return self.x.shape[1]


class MultinomialModel:
    kind = "multinomial"

    def __init__(self, data, K, gamma0=1.0, gamma=1.0):
        if not isinstance(data, MultinomialData):
            data = MultinomialData(data)
        self.data = data
        self.K = K
        self.n = data.n
        self.M = data.M
        self.c = data.c
        self.L = int(data.c.max())
        gamma_k = np.broadcast_to(np.asarray(gamma, dtype=float), (K,))
        self.gamma0 = float(gamma0)
        self.gamma_diag = np.concatenate(([self.gamma0], gamma_k))
        if (self.gamma_diag <= 0).any():
            raise ValueError("prior precisions must be positive")
        self.eta = np.zeros((self.M, self.L))
        self.theta = np.zeros((K, self.M, self.L))
        # valid[m, l] marks categories that exist for feature m
        self.valid = np.arange(self.L)[None, :] < self.c[:, None]
        # working matrix with per-sweep imputations in the missing cells
        self.x_filled = data.x.copy()
        for m in range(self.M):
            miss = ~data.observed[:, m]
            self.x_filled[miss, m] = 0

    # -- parameter plumbing -------------------------------------------------

    def init_params(self, rng):
        sd = 1.0 / np.sqrt(self.gamma_diag)
        self.eta[:] = 0.0
        self.theta[:] = 0.0
        free = self.valid.copy()
        free[:, 0] = False  # identifiability pins
        self.eta[free] = sd[0] * rng.standard_normal(int(free.sum()))
        for k in range(self.K):
            self.theta[k][free] = sd[1 + k] * rng.standard_normal(int(free.sum()))

    def snapshot(self):
        return {"eta": self.eta.copy(), "theta": self.theta.copy()}

    def restore(self, snap):
        self.eta = np.asarray(snap["eta"], dtype=float).copy()
        self.theta = np.asarray(snap["theta"], dtype=float).copy()

    def meta(self):
        return {
            "c": self.c.tolist(),
            "gamma0": self.gamma0,
            "gamma": self.gamma_diag[1:].tolist(),
        }

    def factor_blocks(self):
        """Per-factor effect blocks (identifiable coordinates) for repulsion."""
        return self.theta[:, :, 1:].reshape(self.K, -1)

    # -- likelihood ----------------------------------------------------------

    def logits_row(self, z_row):
        lg = self.eta + np.tensordot(np.asarray(z_row, dtype=float), self.theta, axes=1)
        return np.where(self.valid, lg, -np.inf)

    def probs_row(self, z_row, m=None):
        """Category probabilities, stabilized; invalid categories get 0."""
        lg = self.logits_row(z_row)
        if m is not None:
            lg = lg[m]
            p = np.exp(lg - logsumexp(lg[: self.c[m]]))
            return p
        p = np.exp(lg - logsumexp(lg, axis=1, keepdims=True))
        return p

    def loglik_row(self, i, z_row):
        lg = self.logits_row(z_row)
        lse = logsumexp(lg, axis=1)
        obs = self.data.observed[i]
        picks = lg[np.arange(self.M)[obs], self.data.x[i][obs]]
        return float(np.sum(picks - lse[obs]))

    def loglik_rows_many(self, i, Zc):
        Zc = np.asarray(Zc, dtype=float)
        lg = self.eta[None] + np.tensordot(Zc, self.theta, axes=1)  # (C, M, L)
        lg = np.where(self.valid[None], lg, -np.inf)
        lse = logsumexp(lg, axis=2)  # (C, M)
        obs = self.data.observed[i]
        cols = self.data.x[i][obs]
        picks = lg[:, obs, :][:, np.arange(obs.sum()), cols]
        return np.sum(picks - lse[:, obs], axis=1)

    def total_loglik(self, Z):
        return float(sum(self.loglik_row(i, Z[i]) for i in range(self.n)))

    def mean_response(self, z_row):
        """(M, L) category probability matrix, zeros at invalid categories."""
        p = self.probs_row(z_row)
        return np.where(self.valid, p, 0.0)

    # -- Gibbs updates ---------------------------------------------------------

    def _block_matrix(self, m):
        """Theta_m stacked as a (K+1, L) array: baseline row then factor rows."""
        return np.vstack([self.eta[m], self.theta[:, m, :]])

    def update_theta_block(self, m, l, Z, rng, repulsion=None):
        """Resample (eta_ml, theta_1ml..theta_Kml) via the one-vs-rest PG draw.

        Returns (accepted, omega) where omega holds the PG draws of the
        subjects that entered the block (missing cells contribute nothing).
        """
        if l < 1 or l >= self.c[m]:
            raise ValueError(f"block l={l} out of range for feature {m}")
        obs = self.data.observed[:, m]
        Zext = np.column_stack([np.ones(self.n), Z]).astype(float)
        theta_m = self._block_matrix(m)  # (K+1, L)
        psi = Zext @ theta_m  # (n, L)
        psi = np.where(self.valid[m][None, :], psi, -np.inf)
        rest = psi.copy()
        rest[:, l] = -np.inf
        C = logsumexp(rest, axis=1)  # log sum_{l' != l} exp(psi_l')
        tilt = psi[:, l] - C
        Zobs = Zext[obs]
        omega = sample_pg_vec(np.ones(int(obs.sum())), tilt[obs], rng)
        kappa = (self.data.x[obs, m] == l).astype(float) - 0.5
        A = (Zobs * omega[:, None]).T @ Zobs + np.diag(self.gamma_diag)
        b = Zobs.T @ (kappa + omega * C[obs])
        try:
            lower = cholesky(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalAbort(
                f"multinomial block (m={m}, l={l}) precision not PD"
            ) from exc
        mean = cho_solve((lower, True), b)
        prop = mean + np.linalg.solve(lower.T, rng.standard_normal(self.K + 1))
        accepted = True
        if repulsion is not None and self.K > 1:
            blocks_curr = self.factor_blocks()
            blocks_star = blocks_curr.copy()
            col = m * (self.L - 1) + (l - 1)
            blocks_star[:, col] = prop[1:]
            accepted = repulsion.accept(rng, blocks_star, blocks_curr)
        if accepted:
            self.eta[m, l] = prop[0]
            self.theta[:, m, l] = prop[1:]
        return accepted, omega

    def update_params(self, Z, rng, repulsion=None):
        for m in range(self.M):
            for l in range(1, self.c[m]):
                self.update_theta_block(m, l, Z, rng, repulsion)

    def impute_missing(self, Z, rng):
        """Redraw every missing cell from its current category distribution."""
        for i, m in zip(*np.nonzero(~self.data.observed)):
            p = self.probs_row(Z[i], m)[: self.c[m]]
            self.x_filled[i, m] = rng.choice(self.c[m], p=p / p.sum())

    def sweep_extras(self, Z, rng, adapt=False):
        if not self.data.observed.all():
            self.impute_missing(Z, rng)

    def resample_data(self, Z, rng):
        """Redraw the observed cells given (Z, params); simulation checks."""
        for i in range(self.n):
            p = self.probs_row(Z[i])
            for m in range(self.M):
                if self.data.observed[i, m]:
                    val = rng.choice(self.L, p=p[m] / p[m].sum())
                    self.data.x[i, m] = val
                    self.x_filled[i, m] = val
