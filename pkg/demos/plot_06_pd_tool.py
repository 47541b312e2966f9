"""
The PD tool
===========

One PRI-NLM pass guided by any prefiltered image, then one NL-PCA pass.
Here the guide is a surrogate: the clean volume plus Gaussian noise.
"""

import numpy as np

from pcapri import metrics, noise, phantom, pipeline

ref = phantom.generate(phantom.default_spec((64, 64, 64)), seed=0)
sigma = 0.05 * ref.intensity_peak
u = noise.simulate_rician(ref.data, sigma, seed=1)

guide = pipeline.build_surrogate(ref, 0.015 * ref.intensity_peak, seed=2)
out = pipeline.pd_tool(u, guide, sigma)
print("surrogate", round(metrics.psnr(guide, ref.data), 2), "PD", round(metrics.psnr(out, ref.data), 2))

# the same through chains, with stage seeds split from one root seed
res = pipeline.run_many(
    u, ["cp", "cpd", "cpp", "cpdp"], truth=ref, background=ref.data == 0,
    surrogate_rmse=0.015 * ref.intensity_peak, seed=0,
)
for chain, (_, rep) in res.items():
    print(chain, np.round([s.psnr for s in rep.stages], 2))
