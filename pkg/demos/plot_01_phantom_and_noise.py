"""
Phantoms and Rician noise
=========================

Build the desk-scale phantom and corrupt it with magnitude (Rician) noise.
"""

import numpy as np

from pcapri import noise, phantom

# three nested ellipsoids plus two small lesions on a zero background
ref = phantom.generate(phantom.default_spec((64, 64, 64)), seed=0)
print("dims", ref.dims, "peak", round(ref.intensity_peak, 2))
print("background fraction", round(float(np.mean(ref.data == 0)), 3))

# the T2-like profile swaps bright and dark tissue
t2 = phantom.generate(phantom.default_spec((64, 64, 64), profile="t2"), seed=0)
inside = ref.data > 0
print("T1/T2 correlation inside the object", round(np.corrcoef(ref.data[inside], t2.data[inside])[0, 1], 3))

# noise levels are given as a percentage of the peak
sigma = 0.05 * ref.intensity_peak
u = noise.simulate_rician(ref.data, sigma, seed=1)

# where the signal is zero the magnitude is Rayleigh distributed
bg = u[ref.data == 0]
print("background mean / sigma", round(bg.mean() / sigma, 4), "expected", round(np.sqrt(np.pi / 2), 4))

# the second moment is v^2 + 2 sigma^2 everywhere
v = 100.0
draws = noise.simulate_rician(np.full(10**6, v), sigma, seed=2)
print("E[u^2]", round(float(np.mean(draws**2)), 1), "expected", round(v * v + 2 * sigma * sigma, 1))
