"""
Echogenicity from sample variance
=================================

If samples scatter around the reflectivity with ``Var = p^(2 beta)``, a
log-log fit of variance against a known echogenicity gives beta, and the
variance image then estimates the echogenicity as ``Var^(1 / (2 beta))``.
"""

import numpy as np

from drus.multisample import aggregate, beta_model_fit, echogenicity_from_variance

rng = np.random.default_rng(0)
n = 10_000
p = np.exp(rng.uniform(np.log(0.05), np.log(5.0), n))
o = p * rng.standard_normal(n)

for beta in (0.5, 1.0):
    for M in (50, 200):
        X = o + p ** beta * rng.standard_normal((M, n))
        fit = beta_model_fit(X, p)
        p_hat = echogenicity_from_variance(aggregate(X).variance, fit.beta)
        err = np.median(np.abs(p_hat - p) / p)
        print(f"beta {beta}  M {M:3d}: fit {fit.beta:.3f} (log-fit RMS {fit.residual:.3f}), median echogenicity error {err:.1%}")
