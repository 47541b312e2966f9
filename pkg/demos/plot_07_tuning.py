"""
Tuning NL-PCA
=============

Particle swarm over (d, M, w, tau_beta, T) with a rounding repair, and a
grid over tau_beta = T.  The objective is PSNR against a clean volume on
non-overlapping windows.
"""

import numpy as np

from pcapri import noise, phantom, tuner

ref = phantom.generate(phantom.default_spec((32, 32, 32)), seed=0)
u = noise.simulate_gaussian(ref.data, 0.01 * ref.intensity_peak, np.random.SeedSequence([0, 100]))
obj = tuner.make_nlpca_objective(ref.data, u)

# infeasible proposals are rounded and clamped before evaluation
print(tuner.repair((3.4, 30.2, 2.7, 2.5, 2.4)))

rows = tuner.grid_search(obj, [1.5, 2.0, 2.46, 3.0])
print(tuner.grid_to_csv(rows))

# a short swarm; the defaults use 50 particles and 50 iterations
lo, hi = tuner.default_bounds()
res = tuner.pso_optimize(obj, tuner.PsoConfig(lo, hi, swarm_size=6, max_iterations=4), repair=tuner.repair)
print(res.to_json())
