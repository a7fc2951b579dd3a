"""A low-dimensional basis for calibration curves.

Distortion curves produced by scale errors form a smooth one-parameter
family, so a handful of principal components capture nearly all of their
variation.  Reconstructions are turned back into valid maps by monotonizing.
"""
import numpy as np

from metacal import analytic_distortion_curve, fit_pca_basis, monotonize_curve, project_curve, reconstruct_curve
from metacal.curves import grid

g = grid(384)
ks = np.geomspace(0.3, 3.0, 21)
curves = np.array([analytic_distortion_curve(k, g) for k in ks])

basis = fit_pca_basis(curves, 3)
print("explained variance ratio", np.round(basis.explained_variance_ratio, 5))
print("cumulative", basis.explained_variance_ratio.sum())

for k in (0.45, 1.3, 2.7):
    c = analytic_distortion_curve(k, g)
    theta = project_curve(basis, c)
    raw = reconstruct_curve(basis, theta)
    cal_map = monotonize_curve(raw)
    err = np.max(np.abs(cal_map(g) - c))
    print(f"k={k}: theta={np.round(theta, 3)}  sup error {err:.4f}")

# a wildly non-monotone vector still gives a valid map
bad = monotonize_curve([0.0, 0.7, 0.2, 1.3, 0.9, 1.0])
print("monotonized", bad.outputs)
