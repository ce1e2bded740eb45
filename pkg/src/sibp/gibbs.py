"""Blocked Gibbs sampler for latent binary factor models with the spatial
stick-breaking prior.

One sweep updates, in order: the latent field columns u_1..u_K (each via
the binary-expansion + Polya-gamma augmentation), every subject's binary
row, every observation-model parameter block (wrapped in the repulsive
accept/reject), the field precision tau, the field level mu, the kernel
parameters psi (random-walk MH), and finally any observation-specific
extras (missing-data imputation, dispersion walks).

The sampler is generic over the observation model, which must provide:

    n                          number of subjects
    kind                       short model name for persisted metadata
    init_params(rng)           draw parameters from their priors
    loglik_row(i, z_row)       log f(x_i | z_row, params)
    loglik_rows_many(i, Zc)    vectorized loglik over candidate rows
    update_params(Z, rng, repulsion)
    sweep_extras(Z, rng, adapt)
    resample_data(Z, rng)      redraw the data in place (simulation checks)
    factor_blocks()            (K, p) per-factor parameter blocks
    snapshot() / restore(d)    parameter state as a dict of arrays
    meta()                     persisted model description
    total_loglik(Z)            sum of loglik_row over subjects
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import expit, log_expit

from .kernels import (
    EXCHANGEABLE,
    FactorizationError,
    KernelSpec,
    as_coords,
    build_correlation_from_distances,
    pairwise_distances,
)
from .nngp import build_neighbor_graph
from .pg import sample_pg_vec

__all__ = [
    "SamplerConfig",
    "ChainState",
    "ChainOutput",
    "Repulsion",
    "repulsion_g",
    "repulsive_accept",
    "NumericalAbort",
    "GibbsSampler",
    "run_chain",
]

JOINT_Z_MAX_K = 25
AUTO_COORDINATE_K = 8


class NumericalAbort(RuntimeError):
    """A sampler block failed numerically; carries iteration and block name."""


@dataclass
class SamplerConfig:
    K: int
    burn_in: int = 2000
    keep: int = 2000
    thin: int = 1
    seed: int = 0
    a_tau: float = 2.0
    b_tau: float = 2.0
    m_mu: float = 0.0
    s_mu: float = 1.0  # prior variance of mu
    psi_prior: dict = field(
        default_factory=lambda: {"phi": (2.0, 2.0), "kappa": (2.0, 2.0)}
    )
    repulsion_delta: float = 1e-3
    rw_step_psi: float = 0.4
    rw_step_mu: float = 0.3  # used only under the sparse-field prior
    z_update_mode: str = "auto"  # auto | joint | coordinate
    adapt: bool = True
    adapt_window: int = 50
    store_u: bool = False
    update_tau: bool = True
    update_mu: bool = True
    update_psi: bool = True
    progress: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.keep < 1:
            raise ValueError(f"keep must be >= 1, got {self.keep}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if not self.repulsion_delta > 0:
            raise ValueError("repulsion delta must be positive")
        if self.z_update_mode not in ("auto", "joint", "coordinate"):
            raise ValueError(f"unknown z update mode: {self.z_update_mode!r}")
        if self.resolved_z_mode() == "joint" and self.K > JOINT_Z_MAX_K:
            raise ValueError(
                f"joint z updates enumerate 2^K rows; K={self.K} exceeds {JOINT_Z_MAX_K}"
            )
        for name, (shape, rate) in self.psi_prior.items():
            if not (shape > 0 and rate > 0):
                raise ValueError(f"psi prior for {name} must be positive, got {shape, rate}")

    def resolved_z_mode(self):
        if self.z_update_mode != "auto":
            return self.z_update_mode
        return "joint" if self.K < AUTO_COORDINATE_K else "coordinate"


@dataclass
class ChainState:
    U: np.ndarray  # (n, K)
    Z: np.ndarray  # (n, K) int8
    omega: np.ndarray  # (n, K) PG draws of the u updates
    tau: float
    mu: float
    psi: np.ndarray  # kernel parameters (possibly empty)
    iteration: int = 0


@dataclass
class ChainOutput:
    """Kept posterior draws plus the metadata required to act on them."""

    coords: np.ndarray
    location_ids: list
    kernel_family: str
    K: int
    model_kind: str
    model_meta: dict
    draws: dict  # name -> (n_draws, ...) array
    config: SamplerConfig

    @property
    def n_draws(self):
        return self.draws["tau"].shape[0]

    def presence_probabilities(self):
        """P(z_ik = 1 | data) as the across-draw mean of the indicators."""
        return self.draws["Z"].mean(axis=0)

    def kernel_spec(self, psi=None):
        spec = KernelSpec(self.kernel_family, phi=1.0, kappa=1.0)
        if psi is None:
            return spec
        return spec.with_params(np.atleast_1d(psi))


def repulsion_g(x, delta):
    """The pair penalty g(x) = I(x > delta) (1 - delta / x)."""
    return 0.0 if x <= delta else 1.0 - delta / x


def _min_gap_to_others(block, others, delta):
    if len(others) == 0:
        return 1.0
    gaps = [repulsion_g(float(np.linalg.norm(block - o)), delta) for o in others]
    return min(gaps)


def repulsive_accept(theta_star, theta_curr, others, delta, rng):
    """Accept/reject a factor-block proposal drawn from its plain
    (non-repulsive) full conditional.

    The acceptance probability is min(1, g_min(star) / g_min(curr)) with
    g_min(theta) = min over other blocks of g(||theta - theta_k'||); a
    currently colliding block (g_min = 0) escapes whenever the proposal
    does not collide.
    """
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    theta_curr = np.asarray(theta_curr, dtype=float).ravel()
    others = [np.asarray(o, dtype=float).ravel() for o in others]
    g_star = _min_gap_to_others(theta_star, others, delta)
    g_curr = _min_gap_to_others(theta_curr, others, delta)
    if g_curr == 0.0:
        return g_star > 0.0
    if g_star >= g_curr:
        return True
    return rng.random() < g_star / g_curr


@dataclass
class Repulsion:
    """Configuration-level repulsive accept used by the parameter blocks.

    Observation models draw one Gaussian block from its plain conditional;
    because such a block spans coordinates of every factor, the exact
    Metropolis correction is the ratio of min-over-all-pairs penalties of
    the proposed vs current factor configurations.
    """

    delta: float

    def min_pairwise(self, blocks):
        blocks = np.asarray(blocks, dtype=float)
        K = blocks.shape[0]
        if K < 2:
            return 1.0
        best = np.inf
        for a in range(K - 1):
            d = np.linalg.norm(blocks[a + 1 :] - blocks[a], axis=1)
            best = min(best, d.min())
        return repulsion_g(float(best), self.delta)

    def accept(self, rng, blocks_star, blocks_curr):
        g_star = self.min_pairwise(blocks_star)
        g_curr = self.min_pairwise(blocks_curr)
        if g_curr == 0.0:
            return g_star > 0.0
        if g_star >= g_curr:
            return True
        return rng.random() < g_star / g_curr


class _StepAdapter:
    """Random-walk step adaptation toward a 30-40% acceptance window,
    active during burn-in only."""

    def __init__(self, step):
        self.step = step
        self.accepted = 0
        self.total = 0

    def record(self, accepted):
        self.accepted += bool(accepted)
        self.total += 1

    def adapt(self):
        if self.total == 0:
            return
        rate = self.accepted / self.total
        if rate < 0.30:
            self.step *= 0.85
        elif rate > 0.40:
            self.step *= 1.20
        self.accepted = 0
        self.total = 0


class GibbsSampler:
    def __init__(self, model, locations, kernel, config, nngp_m=None):
        self.model = model
        self.coords = as_coords(locations)
        self.location_ids = [
            loc.id for loc in locations
        ] if not isinstance(locations, np.ndarray) else [
            str(i) for i in range(self.coords.shape[0])
        ]
        n = self.coords.shape[0]
        if model.n != n:
            raise ValueError(f"model has {model.n} subjects but {n} locations given")
        self.kernel = kernel
        self.config = config
        self.n = n
        self.exchangeable = kernel.family == EXCHANGEABLE
        self.nngp_m = None if self.exchangeable else nngp_m
        self.repulsion = Repulsion(config.repulsion_delta)
        self._psi_adapter = _StepAdapter(config.rw_step_psi)
        self._mu_adapter = _StepAdapter(config.rw_step_mu)
        self.corr = None
        self.graph = None
        if not self.exchangeable:
            self.D = pairwise_distances(self.coords)
        self._block = "init"

    # -- kernel-dependent structures ------------------------------------

    def _rebuild_cov(self, psi):
        spec = self.kernel.with_params(psi) if psi.size else self.kernel
        if self.nngp_m is not None:
            if self.graph is None:
                self.graph = build_neighbor_graph(self.coords, self.nngp_m, spec)
            else:
                self.graph = self.graph.with_kernel(spec)
        else:
            self.corr = build_correlation_from_distances(self.D, spec)

    def _quadform_sum(self, V):
        """sum_k v_k^T P v_k on the correlation scale (no tau)."""
        if self.nngp_m is not None:
            return self.graph.quadform(V)
        return float(np.sum(V * self.corr.solve(V)))

    # -- initialization ---------------------------------------------------

    def initial_state(self, rng):
        cfg = self.config
        tau = rng.gamma(cfg.a_tau, 1.0 / cfg.b_tau)
        mu = cfg.m_mu + math.sqrt(cfg.s_mu) * rng.standard_normal()
        if self.exchangeable:
            psi = np.empty(0)
        else:
            if self.config.update_psi:
                psi = np.array(
                    [
                        rng.gamma(shape, 1.0 / rate)
                        for shape, rate in (
                            _shape_rate(cfg.psi_prior, name)
                            for name in self.kernel.param_names
                        )
                    ]
                )
            else:
                psi = self.kernel.params
            self._rebuild_cov(psi)
        K = cfg.K
        if self.exchangeable:
            shared = mu + rng.standard_normal(K) / math.sqrt(tau)
            U = np.broadcast_to(shared, (self.n, K)).copy()
        elif self.nngp_m is not None:
            U = np.column_stack(
                [self.graph.sample_field(mu, tau, rng) for _ in range(K)]
            )
        else:
            U = self.corr.sample_field(mu, tau, rng, size=K)
        B = np.cumprod(expit(U), axis=1)
        Z = (rng.random((self.n, K)) < B).astype(np.int8)
        self.model.init_params(rng)
        return ChainState(
            U=U,
            Z=Z,
            omega=np.zeros((self.n, K)),
            tau=tau,
            mu=mu,
            psi=psi,
        )

    # -- individual updates ----------------------------------------------

    def update_u_block(self, state, k, rng):
        """Column k of the latent field via the binary-expansion + PG scheme."""
        U, Z = state.U, state.Z
        n, K = U.shape
        nk = K - k  # augmented row count; also the PG shape
        # full[:, j] = sum_{h <= j} log sigma(u_ih); C_ikj drops the k-th term
        full = np.cumsum(log_expit(U), axis=1)
        anchor = log_expit(U[:, k])
        sub = full[:, k:] - anchor[:, None]
        C = -np.expm1(sub)  # C_ikj in [0, 1)
        with np.errstate(divide="ignore"):
            p_s = expit(np.log(C) + U[:, k][:, None])
        zsub = Z[:, k:]
        s = (rng.random((n, nk)) < p_s) & (zsub == 0)
        kappa = zsub.sum(axis=1) + s.sum(axis=1) - 0.5 * nk
        omega = sample_pg_vec(np.full(n, float(nk)), U[:, k], rng)
        state.omega[:, k] = omega
        if self.exchangeable:
            prec = omega.sum() + state.tau
            lin = kappa.sum() + state.tau * state.mu
            U[:, k] = lin / prec + rng.standard_normal() / math.sqrt(prec)
            return
        if self.nngp_m is not None:
            M = self.graph.structure_matrix()
            A = state.tau * M + np.diag(omega)
            b = kappa + state.tau * state.mu * self.graph.structure_ones()
        else:
            A = state.tau * self.corr.inv + np.diag(omega)
            b = kappa + state.tau * state.mu * self.corr.solve_ones
        try:
            lower = cholesky(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalAbort(
                f"u-block {k}: conditional precision not PD ({exc})"
            ) from exc
        mean = cho_solve((lower, True), b)
        U[:, k] = mean + solve_triangular(
            lower, rng.standard_normal(n), lower=True, trans="T"
        )

    def _configs(self):
        K = self.config.K
        grid = np.indices((2,) * K).reshape(K, -1).T[:, ::-1]
        return np.ascontiguousarray(grid.astype(np.int8))

    def update_z_row(self, state, i, rng, logb=None, log1mb=None, configs=None):
        """Resample subject i's binary row from its full conditional."""
        U = state.U
        if logb is None:
            row = np.cumsum(log_expit(U[i]), axis=0)
            logb_i = row
            with np.errstate(divide="ignore"):
                log1mb_i = np.log1p(-np.exp(row))
        else:
            logb_i, log1mb_i = logb[i], log1mb[i]
        mode = self.config.resolved_z_mode()
        if mode == "joint":
            if configs is None:
                configs = self._configs()
            prior = configs @ logb_i + (1 - configs) @ log1mb_i
            ll = self.model.loglik_rows_many(i, configs)
            w = prior + ll
            w -= w.max()
            p = np.exp(w)
            p /= p.sum()
            idx = int(np.searchsorted(np.cumsum(p), rng.random()))
            state.Z[i] = configs[min(idx, len(p) - 1)]
            return
        z = state.Z[i].copy()
        ll_cur = self.model.loglik_row(i, z)
        for k in range(self.config.K):
            old = z[k]
            z[k] = 1 - old
            ll_flip = self.model.loglik_row(i, z)
            z[k] = old
            ll1, ll0 = (ll_cur, ll_flip) if old == 1 else (ll_flip, ll_cur)
            p1 = expit((logb_i[k] + ll1) - (log1mb_i[k] + ll0))
            new = 1 if rng.random() < p1 else 0
            if new != old:
                z[k] = new
                ll_cur = ll1 if new == 1 else ll0
        state.Z[i] = z

    def _update_all_z(self, state, rng):
        full = np.cumsum(log_expit(state.U), axis=1)
        with np.errstate(divide="ignore"):
            log1mb = np.log1p(-np.exp(full))
        configs = (
            self._configs() if self.config.resolved_z_mode() == "joint" else None
        )
        for i in range(self.n):
            self.update_z_row(state, i, rng, full, log1mb, configs)

    def update_tau(self, state, rng):
        cfg = self.config
        K = cfg.K
        if self.exchangeable:
            v = state.U[0] - state.mu
            qf = float(v @ v)
            shape = cfg.a_tau + K / 2.0
        else:
            V = state.U - state.mu
            qf = self._quadform_sum(V)
            shape = cfg.a_tau + self.n * K / 2.0
        if qf < 0:
            raise NumericalAbort(f"tau update: negative quadratic form {qf}")
        rate = cfg.b_tau + 0.5 * qf
        state.tau = rng.gamma(shape, 1.0 / rate)

    def tau_full_conditional(self, state):
        """(shape, rate) of the tau full conditional at the current state."""
        cfg = self.config
        if self.exchangeable:
            v = state.U[0] - state.mu
            return cfg.a_tau + cfg.K / 2.0, cfg.b_tau + 0.5 * float(v @ v)
        V = state.U - state.mu
        return (
            cfg.a_tau + self.n * cfg.K / 2.0,
            cfg.b_tau + 0.5 * self._quadform_sum(V),
        )

    def mu_full_conditional(self, state):
        """(precision A, linear term B) of the mu full conditional (dense or
        exchangeable paths)."""
        cfg = self.config
        K = cfg.K
        if self.exchangeable:
            A = K * state.tau + 1.0 / cfg.s_mu
            B = state.tau * float(state.U[0].sum()) + cfg.m_mu / cfg.s_mu
            return A, B
        w = self.corr.solve_ones
        A = K * state.tau * float(w.sum()) + 1.0 / cfg.s_mu
        B = state.tau * float(w @ state.U.sum(axis=1)) + cfg.m_mu / cfg.s_mu
        return A, B

    def update_mu(self, state, rng, adapt=False):
        cfg = self.config
        if self.nngp_m is not None:
            # random-walk MH against the sparse-field density
            step = self._mu_adapter.step
            prop = state.mu + step * rng.standard_normal()
            V_cur = state.U - state.mu
            V_new = state.U - prop
            logr = -0.5 * state.tau * (
                self.graph.quadform(V_new) - self.graph.quadform(V_cur)
            )
            logr -= 0.5 * ((prop - cfg.m_mu) ** 2 - (state.mu - cfg.m_mu) ** 2) / cfg.s_mu
            accepted = math.log(rng.random()) < logr
            if accepted:
                state.mu = prop
            if adapt:
                self._mu_adapter.record(accepted)
            return
        A, B = self.mu_full_conditional(state)
        state.mu = B / A + rng.standard_normal() / math.sqrt(A)

    def update_psi(self, state, rng, adapt=False):
        """Log-scale random-walk MH on the kernel parameters.

        Returns True when the proposal was accepted.
        """
        if self.exchangeable or state.psi.size == 0:
            return False
        cfg = self.config
        step = self._psi_adapter.step
        prop = state.psi * np.exp(step * rng.standard_normal(state.psi.size))
        spec_new = self.kernel.with_params(prop)
        K = cfg.K
        V = state.U - state.mu
        try:
            if self.nngp_m is not None:
                graph_new = self.graph.with_kernel(spec_new)
                logdet_old = self.graph.logdet()
                logdet_new = graph_new.logdet()
                qf_old = self.graph.quadform(V)
                qf_new = graph_new.quadform(V)
            else:
                corr_new = build_correlation_from_distances(self.D, spec_new)
                logdet_old = self.corr.logdet()
                logdet_new = corr_new.logdet()
                qf_old = float(np.sum(V * self.corr.solve(V)))
                qf_new = float(np.sum(V * corr_new.solve(V)))
        except FactorizationError:
            if adapt:
                self._psi_adapter.record(False)
            return False
        logr = 0.5 * K * (logdet_old - logdet_new)
        logr -= 0.5 * state.tau * (qf_new - qf_old)
        for j, name in enumerate(self.kernel.param_names):
            shape, rate = _shape_rate(cfg.psi_prior, name)
            # gamma prior plus the log-scale Jacobian: shape * dlog - rate * dpsi
            logr += shape * (math.log(prop[j]) - math.log(state.psi[j]))
            logr -= rate * (prop[j] - state.psi[j])
        accepted = math.log(rng.random()) < logr
        if accepted:
            state.psi = prop
            if self.nngp_m is not None:
                self.graph = graph_new
            else:
                self.corr = corr_new
        if adapt:
            self._psi_adapter.record(accepted)
        return accepted

    # -- sweep and chain ---------------------------------------------------

    def sweep(self, state, rng, adapt=False):
        cfg = self.config
        try:
            self._block = "u"
            for k in range(cfg.K):
                self.update_u_block(state, k, rng)
            self._block = "z"
            self._update_all_z(state, rng)
            self._block = "theta"
            self.model.update_params(state.Z, rng, self.repulsion)
            if cfg.update_tau:
                self._block = "tau"
                self.update_tau(state, rng)
            if cfg.update_mu:
                self._block = "mu"
                self.update_mu(state, rng, adapt)
            if cfg.update_psi:
                self._block = "psi"
                self.update_psi(state, rng, adapt)
            self._block = "extras"
            self.model.sweep_extras(state.Z, rng, adapt)
        except NumericalAbort as exc:
            raise NumericalAbort(
                f"iteration {state.iteration}, block {self._block}: {exc}"
            ) from exc
        except np.linalg.LinAlgError as exc:
            raise NumericalAbort(
                f"iteration {state.iteration}, block {self._block}: {exc}"
            ) from exc
        state.iteration += 1

    def run(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        state = self.initial_state(rng)
        total = cfg.burn_in + cfg.keep * cfg.thin
        kept = {
            "iteration": [],
            "tau": [],
            "mu": [],
            "psi": [],
            "Z": [],
        }
        if cfg.store_u:
            kept["U"] = []
        param_draws = None
        for it in range(total):
            in_burn = it < cfg.burn_in
            self.sweep(state, rng, adapt=in_burn and cfg.adapt)
            if in_burn and cfg.adapt and (it + 1) % cfg.adapt_window == 0:
                self._psi_adapter.adapt()
                self._mu_adapter.adapt()
            if not in_burn and (it - cfg.burn_in) % cfg.thin == 0:
                kept["iteration"].append(state.iteration)
                kept["tau"].append(state.tau)
                kept["mu"].append(state.mu)
                kept["psi"].append(state.psi.copy())
                kept["Z"].append(state.Z.copy())
                if cfg.store_u:
                    kept["U"].append(state.U.copy())
                snap = self.model.snapshot()
                if param_draws is None:
                    param_draws = {key: [] for key in snap}
                for key, val in snap.items():
                    param_draws[key].append(val)
            if cfg.progress and (it + 1) % 500 == 0:
                print(f"sweep {it + 1}/{total}")
        draws = {
            "iteration": np.array(kept["iteration"], dtype=int),
            "tau": np.array(kept["tau"]),
            "mu": np.array(kept["mu"]),
            "psi": np.array(kept["psi"]),
            "Z": np.array(kept["Z"], dtype=np.int8),
        }
        if cfg.store_u:
            draws["U"] = np.array(kept["U"])
        for key, vals in (param_draws or {}).items():
            draws[key] = np.array(vals)
        return ChainOutput(
            coords=self.coords,
            location_ids=self.location_ids,
            kernel_family=self.kernel.family,
            K=cfg.K,
            model_kind=self.model.kind,
            model_meta=self.model.meta(),
            draws=draws,
            config=cfg,
        )


def _shape_rate(psi_prior, name):
    if name not in psi_prior:
        raise ValueError(f"no gamma prior configured for kernel parameter {name!r}")
    return psi_prior[name]


def run_chain(model, locations, kernel, config, nngp_m=None):
    """Run one chain and return its kept draws; see GibbsSampler."""
    return GibbsSampler(model, locations, kernel, config, nngp_m=nngp_m).run()
