"""
Delay-and-sum and fully developed speckle
=========================================

A uniform scattering medium imaged with DAS gives a speckle pattern whose
envelope is Rayleigh distributed (mean over standard deviation about 1.91).
"""

import os

import numpy as np

from drus.beamformer import ApodizationSpec, apodization_weights, build_beamformer, das
from drus.metrics import envelope, ks_rayleigh_pvalue, rect_mask, speckle_snr
from drus.render import render_bmode
from drus.simulator import Phantom, sample_scatterers, scatterers_per_cell, synthesize_channel_data
from drus.system_matrix import build_system_matrix, channel_vector

from _common import OUT, desk_setup

s = desk_setup(n_x=64, x_half=4.725e-3, z0=20e-3)
grid = s.grid
H = build_system_matrix(s)

# %%
# The beamformer is (W * H)^T with a Tukey receive window and f-number 1.4.
B = build_beamformer(H, apodization_weights(s.probe, grid, ApodizationSpec()))

# %%
# Scatterers are drawn at continuous positions and summed in the time
# domain, so the data are not generated by H itself.
density = 100.0
print(f"{scatterers_per_cell(density, s.probe, s.acquisition, s.pulse):.1f} scatterers per resolution cell")
phantom = Phantom("speckle", ((-7e-3, 7e-3), (17e-3, 28e-3)), 1.0)
roi = rect_mask(grid, (0.0, 22.54e-3), (7e-3, 4e-3))
snrs, pvals = [], []
for seed in range(5):
    field = sample_scatterers(phantom, density, np.random.default_rng(seed))
    image = das(B, channel_vector(synthesize_channel_data(field, s.probe, s.acquisition, s.pulse)))
    env = envelope(grid.unflatten(image))
    snrs.append(speckle_snr(env, roi))
    pvals.append(ks_rayleigh_pvalue(env, roi, stride=(6, 4)))
print("speckle SNR per seed:", np.round(snrs, 2))
print("KS p-values (decimated by one speckle cell):", np.round(pvals, 3))

# %%
render_bmode(os.path.join(OUT, "speckle_das.png"), grid.unflatten(image))
print("wrote", os.path.join(OUT, "speckle_das.png"))
