"""Calibration curves on a uniform grid and their PCA parameterisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .recalibration import IsotonicMap, fit_isotonic, pava

DEFAULT_GRID = 384
DEFAULT_COMPONENTS = 3


def grid(m: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, m)


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    """Curve values at ``p_i = i / (m - 1)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim != 1 or len(v) < 2:
            raise ValidationError("a calibration curve needs at least two grid values")
        if np.any(~np.isfinite(v)) or np.any((v < 0) | (v > 1)):
            raise ValidationError("curve values must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> np.ndarray:
        return grid(len(self.values))

    def __len__(self) -> int:
        return len(self.values)


def curve_from_map(cal_map: IsotonicMap, m: int = DEFAULT_GRID) -> CalibrationCurve:
    if m < 2:
        raise ValidationError("grid size must be >= 2")
    return CalibrationCurve(np.clip(cal_map(grid(m)), 0.0, 1.0))


def discretize_curve(pairs, m: int = DEFAULT_GRID) -> CalibrationCurve:
    """Fit the anchored isotonic map to ``pairs`` and sample it on ``m`` grid points."""
    return curve_from_map(fit_isotonic(pairs), m)


@dataclass(frozen=True, eq=False)
class PcaCurveBasis:
    """Mean curve plus ``n`` orthonormal directions (rows of ``components``)."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        comps = np.atleast_2d(np.asarray(self.components, dtype=float))
        ratio = np.asarray(self.explained_variance_ratio, dtype=float).ravel()
        if comps.shape[1] != len(mean) or len(ratio) != comps.shape[0]:
            raise ValidationError("basis shapes are inconsistent")
        gram = comps @ comps.T
        # a degenerate input yields zero rows; skip them in the orthonormality check
        live = np.diag(gram) > 0.5
        if not np.allclose(gram[np.ix_(live, live)], np.eye(live.sum()), atol=1e-8):
            raise ValidationError("basis components must be orthonormal")
        if np.any(ratio < 0) or ratio.sum() > 1 + 1e-9 or np.any(np.diff(ratio) > 1e-12):
            raise ValidationError("explained variance ratios must be nonnegative, nonincreasing and sum to <= 1")
        for name, arr in (("mean", mean), ("components", comps), ("explained_variance_ratio", ratio)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def m_grid(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {
            "m_grid": self.m_grid,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaCurveBasis":
        basis = cls(d["mean"], d["components"], d["explained_variance_ratio"])
        if "m_grid" in d and d["m_grid"] != basis.m_grid:
            raise ValidationError("m_grid does not match the stored mean curve")
        return basis


def fit_pca_basis(curves, n: int = DEFAULT_COMPONENTS) -> PcaCurveBasis:
    """Mean-centred PCA of a ``(K, M)`` matrix of curves.

    Each component is sign-fixed so that its largest-magnitude entry is positive
    (the first such entry when several tie up to round-off).
    """
    V = np.asarray([c.values if isinstance(c, CalibrationCurve) else c for c in curves], dtype=float)
    if V.ndim != 2 or V.shape[0] < 2:
        raise ValidationError("PCA needs at least two curves")
    K, M = V.shape
    if not 1 <= n <= min(K - 1, M):
        raise ValidationError(f"n must lie in [1, {min(K - 1, M)}], got {n}")
    mean = V.mean(axis=0)
    _, s, vt = np.linalg.svd(V - mean, full_matrices=False)
    comps = vt[:n].copy()
    total = float(np.sum(s**2))
    if total <= 1e-30 * K * M:
        return PcaCurveBasis(mean, np.zeros((n, M)), np.zeros(n))
    # symmetric curve families give +/- pairs of equal magnitude; take the first
    # entry within round-off of the maximum so the sign does not depend on noise
    mag = np.abs(comps)
    idx = np.argmax(mag >= mag.max(axis=1, keepdims=True) * (1 - 1e-8), axis=1)
    comps *= np.sign(comps[np.arange(n), idx])[:, None]
    return PcaCurveBasis(mean, comps, s[:n] ** 2 / total)


def _values(curve, m: int) -> np.ndarray:
    v = np.asarray(curve.values if isinstance(curve, CalibrationCurve) else curve, dtype=float)
    if v.shape != (m,):
        raise ValidationError(f"curve has {v.shape} values, basis expects {m}")
    return v


def project_curve(basis: PcaCurveBasis, curve) -> np.ndarray:
    """Coefficients ``theta = U (curve - mean)``."""
    return basis.components @ (_values(curve, basis.m_grid) - basis.mean)


def reconstruct_curve(basis: PcaCurveBasis, theta) -> np.ndarray:
    """Raw ``mean + sum_i theta_i u_i``; may leave [0, 1] or be non-monotone."""
    theta = np.asarray(theta, dtype=float).ravel()
    if len(theta) != basis.n_components:
        raise ValidationError(f"expected {basis.n_components} coefficients, got {len(theta)}")
    return basis.mean + theta @ basis.components


def monotonize_curve(raw) -> IsotonicMap:
    """Clamp to [0, 1], isotonic-fit on the uniform grid, and pin the ends to (0, 0) and (1, 1)."""
    raw = np.asarray(raw, dtype=float).ravel()
    if len(raw) < 2:
        raise ValidationError("need at least two curve values")
    y = pava(np.clip(raw, 0.0, 1.0))
    y[0], y[-1] = 0.0, 1.0
    return IsotonicMap(grid(len(raw)), y)
