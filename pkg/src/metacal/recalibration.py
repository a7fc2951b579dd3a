"""Recalibration of forecast CDFs with a monotone map.

Given forecast CDFs ``F_t`` and observed outcomes ``y_t``, the predicted
confidence level is ``p_t = F_t(y_t)`` and the empirical level is the fraction
of predicted levels that are ``<= p_t``.  Fitting a monotone map ``R`` to the
pairs gives the calibrated CDF ``R(F_t(.))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .mixture import CHANNELS, ForecastBatch, LaplacianMixture1D, RayForecast, _per_channel


class ConfidencePair(NamedTuple):
    predicted: float
    empirical: float


@dataclass(frozen=True, eq=False)
class IsotonicMap:
    """Monotone piecewise-linear map from [0, 1] onto [0, 1].

    Knot inputs are strictly increasing, outputs nondecreasing, and the map is
    pinned at (0, 0) and (1, 1).
    """

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float).copy()
        y = np.asarray(self.outputs, dtype=float).copy()
        if x.ndim != 1 or x.shape != y.shape or len(x) < 2:
            raise ValidationError("knots must be two equal-length vectors with at least two entries")
        if np.any(np.diff(x) <= 0):
            raise ValidationError("knot inputs must be strictly increasing")
        if np.any(np.diff(y) < 0):
            raise ValidationError("knot outputs must be nondecreasing")
        if x[0] != 0.0 or x[-1] != 1.0 or y[0] != 0.0 or y[-1] != 1.0:
            raise ValidationError("map must be anchored at (0, 0) and (1, 1)")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            object.__setattr__(self, "_slopes", np.diff(y) / np.diff(x))

    @classmethod
    def identity(cls) -> "IsotonicMap":
        return cls(np.array([0.0, 1.0]), np.array([0.0, 1.0]))

    def __call__(self, p):
        out = np.interp(p, self.inputs, self.outputs)
        return float(out) if np.ndim(out) == 0 else out

    def slope(self, p):
        """Right-continuous derivative of the interpolant (last segment at p = 1)."""
        idx = np.searchsorted(self.inputs, p, side="right") - 1
        idx = np.clip(idx, 0, len(self.inputs) - 2)
        return self._slopes[idx]

    def inverse(self, q):
        """Solve ``map(p) = q``; on a plateau the midpoint of the solution interval is returned."""
        q = np.asarray(q, dtype=float)
        x, y = self.inputs, self.outputs
        n = len(x)
        i = np.clip(np.searchsorted(y, q, side="left"), 0, n - 1)
        j = np.clip(np.searchsorted(y, q, side="right") - 1, 0, n - 1)
        # leftmost solution: on the segment ending at knot i
        i0 = np.maximum(i - 1, 0)
        dy = y[i] - y[i0]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(dy > 0, x[i0] + (q - y[i0]) / dy * (x[i] - x[i0]), x[i])
        # rightmost solution: on the segment starting at knot j
        j1 = np.minimum(j + 1, n - 1)
        dy = y[j1] - y[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.where((dy > 0) & (y[j] < q), x[j] + (q - y[j]) / dy * (x[j1] - x[j]), x[j])
        out = np.clip(0.5 * (a + b), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"inputs": self.inputs.tolist(), "outputs": self.outputs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IsotonicMap":
        return cls(np.asarray(d["inputs"], dtype=float), np.asarray(d["outputs"], dtype=float))


def pava(y, w=None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit of ``y`` (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, sizes = [], [], []
    for yi, wi in zip(y.tolist(), w.tolist()):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v, ww, s = vals.pop(), wts.pop(), sizes.pop()
            tot = wts[-1] + ww
            vals[-1] = (vals[-1] * wts[-1] + v * ww) / tot
            wts[-1] = tot
            sizes[-1] += s
    return np.repeat(vals, sizes)


def predicted_confidence(forecast: RayForecast, color) -> np.ndarray:
    """Per-channel forecast CDF at the observed colour."""
    color = np.asarray(color, dtype=float).reshape(3)
    return np.array([ch.cdf(float(c)) for ch, c in zip(forecast.channels, color)])


def empirical_confidence(predicted_levels, p: float) -> float:
    levels = np.asarray(predicted_levels, dtype=float).ravel()
    if levels.size == 0:
        raise ValidationError("empirical confidence needs at least one level")
    return float(np.count_nonzero(levels <= p) / levels.size)


def empirical_levels(levels) -> np.ndarray:
    """``P_hat(p_t)`` for every entry of ``levels``, counted over the same list."""
    levels = np.asarray(levels, dtype=float).ravel()
    if levels.size == 0:
        raise ValidationError("empirical confidence needs at least one level")
    ordered = np.sort(levels)
    return np.searchsorted(ordered, levels, side="right") / levels.size


def _channel_index(channel) -> int | None:
    if channel in (None, "pooled", "all"):
        return None
    if isinstance(channel, str):
        try:
            return CHANNELS.index(channel.upper())
        except ValueError:
            raise ValidationError(f"unknown channel {channel!r}") from None
    if channel not in (0, 1, 2):
        raise ValidationError(f"unknown channel {channel!r}")
    return int(channel)


def forecast_levels(forecasts, truths) -> np.ndarray:
    """Predicted levels ``(N, 3)`` for a batch (or list) of forecasts."""
    batch = forecasts if isinstance(forecasts, ForecastBatch) else ForecastBatch.from_rays(list(forecasts))
    truths = np.asarray(truths, dtype=float).reshape(-1, 3)
    if len(truths) != len(batch):
        raise ValidationError(f"{len(batch)} forecasts but {len(truths)} colours")
    return batch.cdf(truths)


def recalibration_arrays(levels) -> tuple[np.ndarray, np.ndarray]:
    """Sorted predicted levels and their empirical levels as two arrays."""
    p = np.sort(np.asarray(levels, dtype=float).ravel())
    return p, empirical_levels(p)


def build_recalibration_dataset(forecasts, truths, channel="R") -> list[ConfidencePair]:
    """Recalibration pairs for one channel, sorted by predicted level.

    ``channel="pooled"`` stacks the levels of all three channels.
    """
    levels = forecast_levels(forecasts, truths)
    if len(levels) == 0:
        raise ValidationError("empty recalibration dataset")
    c = _channel_index(channel)
    p, emp = recalibration_arrays(levels if c is None else levels[:, c])
    return [ConfidencePair(a, b) for a, b in zip(p.tolist(), emp.tolist())]


def _pairs_array(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
        raise ValidationError("expected a non-empty list of (predicted, empirical) pairs")
    if np.any(~np.isfinite(arr)) or np.any((arr < 0) | (arr > 1)):
        raise ValidationError("confidence pairs must lie in [0, 1]")
    return arr


def fit_isotonic(pairs) -> IsotonicMap:
    """Monotone least-squares map through recalibration pairs.

    Anchors (0, 0) and (1, 1) join the data before pooling; pairs sharing an
    input are merged into one knot carrying their mean output and count.
    """
    arr = _pairs_array(pairs)
    x = np.concatenate([[0.0], arr[:, 0], [1.0]])
    y = np.concatenate([[0.0], arr[:, 1], [1.0]])
    ux, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    uy = np.bincount(inv, weights=y) / counts
    fitted = pava(uy, counts)
    fitted[0], fitted[-1] = 0.0, 1.0
    return IsotonicMap(ux, np.clip(fitted, 0.0, 1.0))


def calibrated_quantile(cal_map: IsotonicMap, mix: LaplacianMixture1D, q: float) -> float:
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    p = cal_map.inverse(q)
    # a map with a flat end can send interior q to 0 or 1; stay inside the support
    p = min(max(p, 1e-15), 1.0 - 1e-15)
    return mix.quantile(p)


def iqr_uncertainty(maps, forecast: RayForecast) -> float:
    """Channel-averaged interquartile range of the calibrated distributions."""
    maps = _per_channel(maps)
    total = 0.0
    for m, ch in zip(maps, forecast.channels):
        total += calibrated_quantile(m, ch, 0.75) - calibrated_quantile(m, ch, 0.25)
    return max(total / 3.0, 0.0)


def iqr_uncertainty_batch(maps, batch: ForecastBatch) -> np.ndarray:
    """Vectorised :func:`iqr_uncertainty` over a batch; returns ``(N,)``."""
    maps = _per_channel(maps)
    inv = np.array([[m.inverse(0.25), m.inverse(0.75)] for m in maps])
    inv = np.clip(inv, 1e-15, 1.0 - 1e-15)
    lo = batch.quantile(inv[:, 0][None, :])
    hi = batch.quantile(inv[:, 1][None, :])
    return np.maximum((hi - lo).mean(axis=1), 0.0)


def calibration_error(predicted_levels) -> float:
    """Mean squared gap between each level and its empirical frequency."""
    p = np.asarray(predicted_levels, dtype=float).ravel()
    return float(np.mean((p - empirical_levels(p)) ** 2))


def apply_maps(maps, levels) -> np.ndarray:
    """Map ``(N, 3)`` levels channel-wise through one or three maps."""
    maps = _per_channel(maps)
    levels = np.asarray(levels, dtype=float)
    return np.stack([maps[c](levels[:, c]) for c in range(3)], axis=1)


def scene_calibration_error(levels, pooled: bool = False) -> float:
    """Calibration error of ``(N, 3)`` levels.

    Default is the mean of the three per-channel errors; ``pooled=True``
    treats all channels as one list.
    """
    levels = np.asarray(levels, dtype=float)
    if pooled:
        return calibration_error(levels.ravel())
    return float(np.mean([calibration_error(levels[:, c]) for c in range(3)]))


def fit_channel_maps(levels, pooled: bool = False) -> tuple[IsotonicMap, IsotonicMap, IsotonicMap]:
    """Per-channel (or one shared, if ``pooled``) isotonic maps from ``(N, 3)`` levels."""
    levels = np.asarray(levels, dtype=float)
    if pooled:
        m = fit_isotonic(np.column_stack(recalibration_arrays(levels)))
        return (m, m, m)
    return tuple(fit_isotonic(np.column_stack(recalibration_arrays(levels[:, c]))) for c in range(3))
