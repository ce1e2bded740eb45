"""Spatial Indian buffet process factor models.

Binary feature matrices with spatially correlated presence probabilities:
prior simulation and diagnostics, a blocked Gibbs sampler with Polya-gamma
augmentation for multinomial and negative-binomial factor models, a
nearest-neighbor GP option for large site counts, and posterior prediction
at unobserved sites.
"""

from .gibbs import (
    ChainOutput,
    ChainState,
    GibbsSampler,
    NumericalAbort,
    Repulsion,
    SamplerConfig,
    repulsive_accept,
    run_chain,
)
from .kernels import (
    EXCHANGEABLE,
    EXPONENTIAL,
    MATERN,
    CorrelationMatrix,
    FactorizationError,
    KernelSpec,
    Location,
    build_correlation,
    correlation,
    gp_conditional,
)
from .multinomial import MISSING, MultinomialData, MultinomialModel
from .negbin import CountData, NegBinModel
from .nngp import NeighborGraph, build_neighbor_graph, nngp_logdensity
from .pg import pg_mean, pg_var, sample_pg, sample_pg_vec
from .prior import (
    PriorDraw,
    PriorParams,
    delta_p,
    expected_common_features,
    joint_prob_D,
    joint_prob_D_grid,
    limit_moments,
    simulate_prior,
)

__version__ = "0.1.0"
