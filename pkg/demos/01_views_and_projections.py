"""What an agent loses by not seeing every feature.

Builds a small correlated covariance, looks at one agent's view and prints
the best linear predictor it can hope for, the irreducible error and the
risk of a few candidate fits.
"""

import numpy as np

from collabls.data_gen import synth_covariance
from collabls.model_core import (
    ModelSpec,
    ViewMask,
    irreducible_risk,
    missing_feature_risk,
    schur_complement,
    t_operator,
)
from collabls.rng import RngSeed

np.set_printoptions(precision=3, suppress=True)

sigma = synth_covariance(4, spikes=1, spike_factor=6.0, seed=RngSeed(1))
model = ModelSpec(sigma, np.array([1.0, -0.5, 0.8, 0.3]), noise_var=1.0)
view = ViewMask((0, 2), 4)

print("covariance\n", sigma)

# the unobserved coordinates, conditioned on what the agent sees
print("conditional covariance of the hidden block\n", schur_complement(sigma, view))

t = t_operator(sigma, view)
print("T (rows: observed coefficients)\n", t)
print("best achievable local coefficients T theta:", t @ model.theta)

floor = irreducible_risk(model, view)
print(f"irreducible error {floor:.4f}")
for est in (t @ model.theta, model.theta[[0, 2]], np.zeros(2)):
    print(f"  risk of {est}: {missing_feature_risk(est, view, model):.4f}")
