"""
Spectral space of the imaging operator
======================================

The restoration runs in the singular basis of ``BH``, the map from
reflectivity to DAS image. Measurements there are ``ybar = S^+ U^T B y``
with independent noise of standard deviation ``sigma_d / s_i``.
"""

import numpy as np

from drus.beamformer import ApodizationSpec, apodization_weights, build_beamformer
from drus.spectral import compose_BH, factorize, projected_noise_std, spectral_measurement
from drus.system_matrix import apply_forward, build_system_matrix

from _common import desk_setup

s = desk_setup(n_x=16, n_z=64)
H = build_system_matrix(s)
B = build_beamformer(H, apodization_weights(s.probe, s.grid, ApodizationSpec()))

# %%
# Exact SVD for small grids; a randomized subspace iteration takes over
# above a few thousand pixels.
BH = compose_BH(B, H)
exact = factorize(BH, "exact")
print(f"exact: residual {exact.residual_norm:.1e}, condition {exact.S[0] / exact.S[-1]:.1e}")
print("singular values (every 128th):", np.round(exact.S[::128] / exact.S[0], 4))
approx = factorize(BH, "randomized", rank=256, tol=1.0, seed=0)
print(f"randomized rank 256: residual {approx.residual_norm:.2e}")

# %%
# With noise-free data the spectral measurement is just V^T o.
o = np.random.default_rng(1).standard_normal(s.grid.N)
image = B.matrix @ apply_forward(H, o)
meas = spectral_measurement(exact, image, sigma_d=0.0)
print("max |ybar - V^T o| over observed coordinates:",
      np.abs(meas.ybar - exact.V.T @ o)[meas.observed].max())

# %%
# Channel noise of std gamma maps to DAS noise of std gamma * RMS row norm of B.
print("sigma_d for unit channel noise:", projected_noise_std(B, 1.0))
