"""Weights for features that are not Gaussian.

With uniform features the local fits' covariance is no longer a multiple of
the observed covariance block.  The driver matrix is estimated by Monte
Carlo and turned into plug-in weights; the resulting aggregate is compared
with the Gaussian-weight one over repeated draws.
"""

import numpy as np

from collabls.aggregation import collab_run, estimate_q, general_weights_collab
from collabls.data_gen import AgentDataset
from collabls.model_core import ModelSpec, ViewMask, blocks, full_feature_risk, irreducible_risk
from collabls.rng import RngSeed

np.set_printoptions(precision=4, suppress=True)

mix = np.array([[1.0, 0.6, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]])
sigma = mix.T @ mix / 3.0  # uniform(-1, 1) has variance 1/3
model = ModelSpec(sigma, np.array([1.0, -2.0, 1.5]), noise_var=0.25)
views = [ViewMask((0,), 3), ViewMask((1, 2), 3), ViewMask((0, 1, 2), 3)]


def draw(rng, n):
    return rng.uniform(-1, 1, size=(n, 3)) @ mix


rng = RngSeed(6).generator()
pool = draw(rng, 200_000)
q = estimate_q(pool, model.theta, views[0], model.noise_var, len(pool), sigma=sigma)
gauss = (irreducible_risk(model, views[0]) + model.noise_var) * blocks(sigma, views[0])[0]
print("estimated Q for agent 0:", q.ravel(), " Gaussian formula:", gauss.ravel())

risks = {"gaussian": [], "plug-in": []}
for t in range(40):
    r = RngSeed(7, t).generator()
    data = []
    for mk in views:
        x = draw(r, 400)
        y = x @ model.theta + np.sqrt(model.noise_var) * r.standard_normal(400)
        data.append(AgentDataset(x[:, list(mk.observed)], y, mk))
    risks["gaussian"].append(full_feature_risk(collab_run(data, sigma).global_estimate, model))
    theta, _ = general_weights_collab(data, sigma, pool, 50_000)
    risks["plug-in"].append(full_feature_risk(theta, model))

for name, vals in risks.items():
    print(f"{name:>9} weights: mean full-feature risk {np.mean(vals):.5f}")
