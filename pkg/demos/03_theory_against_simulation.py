"""Closed-form covariance of the aggregate versus repeated simulation.

Draws a few hundred independent datasets, aggregates each, and compares the
spread of sqrt(n) (estimate - truth) to the predicted covariance.  Also
shows the pooled-imputation covariance coinciding with it for the right
pooling weights.
"""

import numpy as np

from collabls import baselines as bl
from collabls.aggregation import collab_run
from collabls.data_gen import sample_dataset, synth_covariance
from collabls.model_core import ModelSpec, ViewMask
from collabls.rng import RngSeed
from collabls.theory import TheoryContext, c_gaussian, c_imp_glb, c_strong

np.set_printoptions(precision=3, suppress=True)

sigma = synth_covariance(4, spikes=1, spike_factor=5.0, seed=RngSeed(11))
model = ModelSpec(sigma, np.array([1.0, -0.5, 0.8, 0.3]), noise_var=1.0)
views = [ViewMask(v, 4) for v in ((0, 1, 2, 3), (0, 1), (2, 3), (1, 2))]
ctx = TheoryContext(model, views)

n, trials = 2000, 500
errs = np.array([
    np.sqrt(n) * (collab_run([sample_dataset(model, mk, n, RngSeed(3, t << 8 | i))
                              for i, mk in enumerate(views)], sigma).global_estimate - model.theta)
    for t in range(trials)
])
cg = c_gaussian(ctx)
print("predicted\n", cg)
print("simulated\n", np.cov(errs.T))
print(f"relative Frobenius gap {np.linalg.norm(np.cov(errs.T) - cg) / np.linalg.norm(cg):.3f}")

alphas = bl.oracle_alphas(model, views)
gap = np.abs(c_imp_glb(ctx, alphas) - cg).max()
print(f"pooled imputation with 1/risk weights matches to {gap:.1e}")
print("strong lower bound\n", c_strong(ctx))
