"""
Estimating the noise level
==========================

Three estimators: background local means, wavelet MAD inside the object,
and the per-voxel map produced by NL-PCA.
"""

import numpy as np

from pcapri import nlpca, noise, phantom

ref = phantom.generate(phantom.default_spec((64, 64, 64)), seed=0)

for level in (1, 5, 9):
    sigma = level / 100 * ref.intensity_peak
    u = noise.simulate_rician(ref.data, sigma, seed=level)

    # background median: needs signal-free voxels, found automatically here
    bg = noise.estimate_background_median(u, peak=ref.intensity_peak)
    # object-based MAD of the finest Haar sub-band, Rician corrected
    mad = noise.estimate_mad_wavelet(u)
    print(f"{level}%  true {sigma:6.3f}  background {bg:6.3f}  MAD {mad:6.3f}")

# NL-PCA also returns a spatial map of sigma
u = noise.simulate_rician(ref.data, 0.05 * ref.intensity_peak, seed=5)
nmap = nlpca.estimate_noise_map(u)
print("noise map median / truth", round(float(np.median(nmap) / (0.05 * ref.intensity_peak)), 3))

# a biased magnitude mean is mapped back with the lookup table
m = noise.simulate_rician(np.full(10**5, 50.0), 10.0, seed=3).mean()
print("biased mean", round(m, 3), "corrected", round(float(noise.rician_correct_image(m, 10.0)), 3))
