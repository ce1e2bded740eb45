"""Synthetic spatial multinomial scenarios for benchmarking.

Three ground truths over sites drawn uniformly on [-1, 1]^2:

  I    three deterministic factor regions (disk, half-plane strip, wedge)
       with Gaussian loading draws;
  II   a different trio of regions, the third loading heavy-tailed;
  III  no factor structure at all: per-category halfplane indicators mix
       two smooth surfaces, probing pure prediction accuracy.

Generators are bit-reproducible given a seed; the region indicators are
deterministic functions of the site coordinates, so test-site truths come
from the same formulas (scenarios I-II) or the same category slopes (III).
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["ScenarioSpec", "ScenarioData", "generate_scenario", "scenario_factors"]

_WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str  # "I" | "II" | "III"
    n: int = 80
    n_test: int = 20
    M: int = 50
    L: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("I", "II", "III"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n < 1 or self.n_test < 0:
            raise ValueError("need n >= 1 and n_test >= 0")
        if self.L < 2:
            raise ValueError("need at least two categories")


@dataclass
class ScenarioData:
    spec: ScenarioSpec
    coords: np.ndarray  # (n, 2) training sites
    coords_test: np.ndarray  # (n_test, 2)
    z_true: np.ndarray | None  # (n, 3) factor indicators (scenarios I-II)
    z_true_test: np.ndarray | None
    probs: np.ndarray  # (n, M, L) true category probabilities
    probs_test: np.ndarray  # (n_test, M, L)
    x: np.ndarray  # (n, M) observed categories, 0-based


def scenario_factors(coords, scenario):
    """The deterministic factor indicators of scenarios I and II."""
    s1, s2 = coords[:, 0], coords[:, 1]
    if scenario == "I":
        z1 = (s1**2 + s2**2) < 0.81
        z2 = (s1 < 0.5) & (s2 > 0)
        z3 = s1 < (s2 - 0.7)
    elif scenario == "II":
        z1 = s1 < 0
        z2 = np.abs(s2) > s1
        z3 = (s1 > 0.5) & (s2 < -0.5)
    else:
        raise ValueError(f"scenario {scenario!r} has no global factors")
    return np.column_stack([z1, z2, z3]).astype(np.int8)


def _softmax_probs(Z, theta):
    """(n, M, L) probabilities from indicators (n, 3) and loadings (3, M, L)."""
    logits = np.tensordot(Z.astype(float), theta, axes=1)
    logits -= logits.max(axis=2, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=2, keepdims=True)
    return p


def generate_scenario(spec, rng=None):
    """Draw sites, ground-truth probabilities, and observations."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n, n_test, M, L = spec.n, spec.n_test, spec.M, spec.L
    coords = rng.uniform(-1.0, 1.0, (n, 2))
    coords_test = rng.uniform(-1.0, 1.0, (n_test, 2))
    if spec.scenario in ("I", "II"):
        if spec.scenario == "I":
            theta = np.stack(
                [
                    rng.normal(1.0, 1.0, (M, L)),
                    rng.normal(0.5, 1.5, (M, L)),
                    rng.normal(0.0, 2.0, (M, L)),
                ]
            )
        else:
            theta = np.stack(
                [
                    rng.normal(1.0, np.sqrt(3.0), (M, L)),
                    rng.normal(0.5, 1.5, (M, L)),
                    2.0 + rng.standard_t(3, (M, L)),
                ]
            )
        z = scenario_factors(coords, spec.scenario)
        z_test = scenario_factors(coords_test, spec.scenario)
        probs = _softmax_probs(z, theta)
        probs_test = _softmax_probs(z_test, theta)
    else:
        # per-(category, feature) halfplane split between two surfaces
        c_lm = rng.uniform(-2.0, 2.0, (L, M))
        probs = _scenario3_probs(coords, c_lm)
        probs_test = _scenario3_probs(coords_test, c_lm)
        z = z_test = None
    x = _draw_categories(probs, rng)
    return ScenarioData(
        spec=spec,
        coords=coords,
        coords_test=coords_test,
        z_true=z,
        z_true_test=z_test,
        probs=probs,
        probs_test=probs_test,
        x=x,
    )


def _scenario3_probs(coords, c_lm):
    s1, s2 = coords[:, 0], coords[:, 1]
    L, M = c_lm.shape
    # z[i, l, m] = 1 when s2 > c_lm * s1
    z = s2[:, None, None] > c_lm[None, :, :] * s1[:, None, None]
    smooth = (s1**2 + s2**2)[:, None, None]
    weight = np.where(z, s1[:, None, None], smooth)
    # the linear surface can be negative: floor before normalizing
    weight = np.maximum(weight, _WEIGHT_FLOOR)
    weight = np.transpose(weight, (0, 2, 1))  # (n, M, L)
    return weight / weight.sum(axis=2, keepdims=True)


def _draw_categories(probs, rng):
    n, M, L = probs.shape
    cum = probs.cumsum(axis=2)
    u = rng.random((n, M, 1))
    return (u > cum).sum(axis=2).astype(int)
