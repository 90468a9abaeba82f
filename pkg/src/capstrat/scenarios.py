"""Reference agent populations used by the experiments and tests.

``toy_distribution`` is the two-covariate naturals/gamers mix and
``high_dim_distribution`` its ten-covariate analogue.  Both draw their type
parameters from uniform ranges, so each ``seed`` gives one concrete population.
"""

from __future__ import annotations

import numpy as np

from .agent import AgentType, CostSpec, NoiseModel
from .population import TypeDistribution

TOY_SIGMA = 3.30
TOY_Q = 0.7
HIGH_DIM_SIGMA = 1.10
HIGH_DIM_Q = 0.7
DEFAULT_TOY_SEED = 4
DEFAULT_HIGH_DIM_SEED = 0


def regime_demo_agent() -> AgentType:
    """Single agent used to illustrate the noise regimes."""
    return AgentType(z=[3.0, 0.0], cost=CostSpec([0.1, 1.0]))


def toy_distribution(seed: int = DEFAULT_TOY_SEED, n_each: int = 5) -> TypeDistribution:
    """``n_each`` naturals and ``n_each`` gamers, equal weight, d = 2.

    Naturals: z ~ U[5, 7]^2, g ~ U[10, 20]^2.  Gamers: z ~ U[3, 5]^2,
    g_1 ~ U[0.01, 0.02], g_2 ~ U[10, 20].  Outcomes y1 = z_1, y0 = 0.
    """
    rng = np.random.default_rng(seed)
    types = []
    for _ in range(n_each):
        z = rng.uniform(5, 7, size=2)
        g = rng.uniform(10, 20, size=2)
        types.append(AgentType(z, CostSpec(g), y0=0.0, y1=z[0], tags=("natural",)))
    for _ in range(n_each):
        z = rng.uniform(3, 5, size=2)
        g = np.array([rng.uniform(0.01, 0.02), rng.uniform(10, 20)])
        types.append(AgentType(z, CostSpec(g), y0=0.0, y1=z[0], tags=("gamer",)))
    probs = np.full(len(types), 1.0 / len(types))
    return TypeDistribution(types, probs, NoiseModel(TOY_SIGMA))


def high_dim_distribution(
    seed: int = DEFAULT_HIGH_DIM_SEED, d: int = 10, n_each: int = 5
) -> TypeDistribution:
    """Ten-point support; gamers are cheap to move on the first ``d/2`` covariates.

    Outcomes y1 = sum of the first ``d/2`` raw covariates, y0 = 0.
    """
    rng = np.random.default_rng(seed)
    half = d // 2
    types = []
    for _ in range(n_each):
        z = rng.uniform(5, 7, size=d)
        g = rng.uniform(1, 2, size=d)
        types.append(AgentType(z, CostSpec(g), 0.0, z[:half].sum(), ("natural",)))
    for _ in range(n_each):
        z = rng.uniform(3, 5, size=d)
        g = np.concatenate([rng.uniform(0.1, 0.2, size=half), rng.uniform(1, 2, size=d - half)])
        types.append(AgentType(z, CostSpec(g), 0.0, z[:half].sum(), ("gamer",)))
    probs = np.full(len(types), 1.0 / len(types))
    return TypeDistribution(types, probs, NoiseModel(HIGH_DIM_SIGMA))
