"""
Forward model and its adjoint
=============================

Channel data are linear in the reflectivity map, ``y = H o``. This script
builds the sparse system matrix for a small grid, checks it against direct
time-domain synthesis of on-grid scatterers, and runs a dot-product test of
the adjoint.
"""

import numpy as np

from drus.acquisition import kernel_waveform
from drus.simulator import ScattererField, synthesize_channel_data
from drus.system_matrix import apply_adjoint, apply_forward, build_system_matrix, channel_vector

from _common import desk_setup

# %%
# The pulse is a Gaussian-modulated cosine truncated at four standard deviations.
s = desk_setup(n_x=16, n_z=32)
t = np.linspace(-0.5e-6, 0.5e-6, 11)
print("pulse samples:", np.round(kernel_waveform(s.pulse, t), 3))

# %%
# Each column of H is the echo of one pixel on every element; rows are
# ordered element-major (row = element * K + sample).
H = build_system_matrix(s)
print(f"H is {H.shape[0]} x {H.shape[1]} with {H.nnz} nonzeros "
      f"({H.nnz / H.shape[1] / s.probe.element_count:.1f} per element and pixel)")

# %%
# Scatterers placed exactly on pixel centres give the same channel data
# whether they are summed in the time domain or pushed through H.
rng = np.random.default_rng(0)
idx = rng.choice(s.grid.N, 12, replace=False)
o = np.zeros(s.grid.N)
o[idx] = rng.standard_normal(12)
x, z = s.grid.pixel_positions()
direct = channel_vector(synthesize_channel_data(ScattererField(x[idx], z[idx], o[idx]), s.probe,
                                                s.acquisition, s.pulse))
print("relative difference H o vs direct:", np.linalg.norm(apply_forward(H, o) - direct) / np.linalg.norm(direct))

# %%
# Adjoint test: <H o, y> = <o, H^T y> up to round-off.
worst = 0.0
for _ in range(20):
    o, y = rng.standard_normal(H.shape[1]), rng.standard_normal(H.shape[0])
    Ho = apply_forward(H, o)
    worst = max(worst, abs(Ho @ y - o @ apply_adjoint(H, y)) / (np.linalg.norm(Ho) * np.linalg.norm(y)))
print("worst adjoint mismatch over 20 pairs:", worst)
