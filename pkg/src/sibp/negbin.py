"""Multivariate count factor model with negative-binomial margins.

Feature m of subject i is NB with mean lambda_im = exp(eta_m + sum_k z_ik
theta_km) and dispersion nu_m, so Var = lambda + lambda^2 / nu.  The block
(eta_m, theta_1m..theta_Km) is conditionally Gaussian after a
PG(x_im + nu_m, z_i^T Theta_m - log nu_m) draw per subject; the PG shapes
are non-integer by construction.  Dispersions move by a log-scale random
walk that adapts toward a 30-40% acceptance rate during burn-in.
"""

import math

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.special import gammaln

from .gibbs import NumericalAbort, _StepAdapter
from .pg import sample_pg_vec

__all__ = ["CountData", "NegBinModel"]


class CountData:
    """An (n, M) matrix of nonnegative integer counts (no missing support)."""

    def __init__(self, x):
        x = np.asarray(x, dtype=int)
        if x.ndim != 2:
            raise ValueError(f"expected an (n, M) matrix, got shape {x.shape}")
        if (x < 0).any():
            raise ValueError("counts must be nonnegative")
        self.x = x

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def M(self):
        return self.x.shape[1]


class NegBinModel:
    kind = "negbin"

    def __init__(self, data, K, gamma0=1.0, gamma=1.0, a_nu=2.0, b_nu=1.0,
                 rw_step_nu=0.4):
        if not isinstance(data, CountData):
            data = CountData(data)
        self.data = data
        self.K = K
        self.n = data.n
        self.M = data.M
        gamma_k = np.broadcast_to(np.asarray(gamma, dtype=float), (K,))
        self.gamma0 = float(gamma0)
        self.gamma_diag = np.concatenate(([self.gamma0], gamma_k))
        if (self.gamma_diag <= 0).any():
            raise ValueError("prior precisions must be positive")
        if not (a_nu > 0 and b_nu > 0):
            raise ValueError("dispersion prior parameters must be positive")
        self.a_nu = float(a_nu)
        self.b_nu = float(b_nu)
        self.eta = np.zeros(self.M)
        self.theta = np.zeros((K, self.M))
        self.nu = np.ones(self.M)
        self._nu_adapter = _StepAdapter(rw_step_nu)
        self._lgamma_x1 = gammaln(self.data.x + 1.0)

    # -- parameter plumbing -------------------------------------------------

    def init_params(self, rng):
        sd = 1.0 / np.sqrt(self.gamma_diag)
        self.eta = sd[0] * rng.standard_normal(self.M)
        self.theta = sd[1:, None] * rng.standard_normal((self.K, self.M))
        self.nu = rng.gamma(self.a_nu, 1.0 / self.b_nu, size=self.M)

    def snapshot(self):
        return {
            "eta": self.eta.copy(),
            "theta": self.theta.copy(),
            "nu": self.nu.copy(),
        }

    def restore(self, snap):
        self.eta = np.asarray(snap["eta"], dtype=float).copy()
        self.theta = np.asarray(snap["theta"], dtype=float).copy()
        self.nu = np.asarray(snap["nu"], dtype=float).copy()

    def meta(self):
        return {
            "gamma0": self.gamma0,
            "gamma": self.gamma_diag[1:].tolist(),
            "a_nu": self.a_nu,
            "b_nu": self.b_nu,
        }

    def factor_blocks(self):
        return self.theta.copy()

    # -- likelihood ----------------------------------------------------------

    def linpred_row(self, z_row):
        return self.eta + np.asarray(z_row, dtype=float) @ self.theta

    def loglik_row(self, i, z_row):
        return float(self._loglik_terms(self.data.x[i], self.linpred_row(z_row),
                                        self._lgamma_x1[i]).sum())

    def _loglik_terms(self, x, lp, lg_x1):
        log_nu = np.log(self.nu)
        lse = np.logaddexp(log_nu, lp)  # log(nu + lambda), overflow-safe
        return (
            gammaln(self.nu + x)
            - gammaln(self.nu)
            - lg_x1
            + self.nu * (log_nu - lse)
            + x * (lp - lse)
        )

    def loglik_rows_many(self, i, Zc):
        Zc = np.asarray(Zc, dtype=float)
        LP = self.eta[None, :] + Zc @ self.theta  # (C, M)
        x = self.data.x[i]
        log_nu = np.log(self.nu)
        lse = np.logaddexp(log_nu[None, :], LP)
        const = gammaln(self.nu + x) - gammaln(self.nu) - self._lgamma_x1[i]
        return np.sum(const[None, :] + self.nu * (log_nu[None, :] - lse)
                      + x[None, :] * (LP - lse), axis=1)

    def total_loglik(self, Z):
        return float(sum(self.loglik_row(i, Z[i]) for i in range(self.n)))

    def mean_response(self, z_row):
        """Per-feature intensities lambda_m."""
        return np.exp(self.linpred_row(z_row))

    # -- Gibbs updates ---------------------------------------------------------

    def update_theta_m(self, m, Z, rng, repulsion=None):
        """Resample (eta_m, theta_1m..theta_Km) via the PG-augmented draw."""
        Zext = np.column_stack([np.ones(self.n), Z]).astype(float)
        block = np.concatenate(([self.eta[m]], self.theta[:, m]))
        lp = Zext @ block
        x = self.data.x[:, m].astype(float)
        nu_m = self.nu[m]
        omega = sample_pg_vec(x + nu_m, lp - math.log(nu_m), rng)
        kappa = 0.5 * (x - nu_m)
        A = (Zext * omega[:, None]).T @ Zext + np.diag(self.gamma_diag)
        b = Zext.T @ (kappa + omega * math.log(nu_m))
        try:
            lower = cholesky(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalAbort(f"count block m={m} precision not PD") from exc
        mean = cho_solve((lower, True), b)
        prop = mean + np.linalg.solve(lower.T, rng.standard_normal(self.K + 1))
        accepted = True
        if repulsion is not None and self.K > 1:
            blocks_curr = self.factor_blocks()
            blocks_star = blocks_curr.copy()
            blocks_star[:, m] = prop[1:]
            accepted = repulsion.accept(rng, blocks_star, blocks_curr)
        if accepted:
            self.eta[m] = prop[0]
            self.theta[:, m] = prop[1:]
        return accepted, omega

    def update_params(self, Z, rng, repulsion=None):
        for m in range(self.M):
            self.update_theta_m(m, Z, rng, repulsion)

    def _nu_target(self, m, nu, lp):
        x = self.data.x[:, m]
        lse = np.logaddexp(math.log(nu), lp)
        loglik = float(
            np.sum(gammaln(nu + x)) - self.n * gammaln(nu)
            + nu * np.sum(math.log(nu) - lse) + np.sum(x * (lp - lse))
        )
        # gamma prior with the log-scale Jacobian folded in: a log nu - b nu
        return loglik + self.a_nu * math.log(nu) - self.b_nu * nu

    def update_nu(self, m, Z, rng, adapt=False):
        """Log-scale random-walk step for dispersion m; returns acceptance."""
        Zext = np.column_stack([np.ones(self.n), Z]).astype(float)
        block = np.concatenate(([self.eta[m]], self.theta[:, m]))
        lp = Zext @ block
        nu_cur = self.nu[m]
        nu_prop = nu_cur * math.exp(self._nu_adapter.step * rng.standard_normal())
        logr = self._nu_target(m, nu_prop, lp) - self._nu_target(m, nu_cur, lp)
        accepted = math.log(rng.random()) < logr
        if accepted:
            self.nu[m] = nu_prop
        if adapt:
            self._nu_adapter.record(accepted)
        return accepted

    def sweep_extras(self, Z, rng, adapt=False):
        for m in range(self.M):
            self.update_nu(m, Z, rng, adapt)
        if adapt:
            # pool acceptances across features within the burn-in window
            if self._nu_adapter.total >= 20 * self.M:
                self._nu_adapter.adapt()

    def resample_data(self, Z, rng):
        """Redraw all counts given (Z, params); simulation checks."""
        for i in range(self.n):
            lam = self.mean_response(Z[i])
            p = self.nu / (self.nu + lam)
            self.data.x[i] = rng.negative_binomial(self.nu, p)
        self._lgamma_x1 = gammaln(self.data.x + 1.0)
