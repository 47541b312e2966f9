"""
PRI-NLM and its ceiling
=======================

Non-local means whose weights come from a guide image, averaged over the
original noisy intensities and debiased through the second moment.
"""

from pcapri import metrics, nlpca, noise, phantom, prinlm

ref = phantom.generate(phantom.default_spec((64, 64, 64)), seed=0)
sigma = 0.05 * ref.intensity_peak
u = noise.simulate_rician(ref.data, sigma, seed=1)

# a rough guide: NL-PCA then Rician correction
guide = noise.rician_correct_image(nlpca.denoise(u)[0], sigma)
p = prinlm.denoise(u, guide, sigma)
print("guide PSNR", round(metrics.psnr(guide, ref.data), 2))
print("PRI-NLM PSNR", round(metrics.psnr(p, ref.data), 2))

# with the clean volume as guide and the exact sigma we reach the limit
lim = prinlm.theoretical_limit(ref.data, u, sigma)
q = metrics.evaluate(lim, ref.data)
print("limit PSNR", round(q.psnr, 2), "residual RMSE", round(q.rmse, 3))

# one weight by hand: a voxel difference of 2h gives exp(-1)
h = sigma
print("weight", round(float(prinlm.weight(2 * h, 0.0, 10.0, 10.0, h)), 4))
