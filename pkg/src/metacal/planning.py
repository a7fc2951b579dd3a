"""Next-best-view selection and the information-gain protocol."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .mixture import ForecastBatch
from .recalibration import iqr_uncertainty_batch

PSNR_CAP = 100.0


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for colours in [0, 1]; capped at 100 dB."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def gamma_grid(n: int = 11, top: float = 0.5) -> np.ndarray:
    return np.linspace(0.0, top, n)


def information_gain_curve(pred, truth, umap, gammas) -> list[tuple[float, float]]:
    """PSNR after replacing the ``floor(gamma * H * W)`` most uncertain pixels with the truth.

    Ties in uncertainty go to the lower row-major index.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    umap = np.asarray(umap, dtype=float)
    if pred.shape != truth.shape or pred.shape[:2] != umap.shape:
        raise ValidationError("prediction, truth and uncertainty grids must be congruent")
    gammas = [float(g) for g in gammas]
    if any(not 0.0 <= g <= 0.5 for g in gammas):
        raise DomainError("gamma values must lie in [0, 0.5]")
    n = umap.size
    order = np.lexsort((np.arange(n), -umap.ravel()))
    flat_pred = pred.reshape(n, -1)
    flat_truth = truth.reshape(n, -1)
    out = []
    for g in gammas:
        fixed = flat_pred.copy()
        top = order[: int(np.floor(g * n))]
        fixed[top] = flat_truth[top]
        out.append((g, psnr(fixed, flat_truth)))
    return out


@dataclass(eq=False)
class CandidateView:
    id: int
    pred_image: np.ndarray
    truth_image: np.ndarray | None
    umap: np.ndarray

    def __post_init__(self):
        self.pred_image = np.asarray(self.pred_image, dtype=float)
        self.umap = np.asarray(self.umap, dtype=float)
        if self.pred_image.shape[:2] != self.umap.shape:
            raise ValidationError("prediction and uncertainty map must be congruent")
        if self.truth_image is not None:
            self.truth_image = np.asarray(self.truth_image, dtype=float)
            if self.truth_image.shape != self.pred_image.shape:
                raise ValidationError("prediction and truth images must be congruent")


def calibrated_umap(maps, forecasts: ForecastBatch, shape: tuple[int, int]) -> np.ndarray:
    return iqr_uncertainty_batch(maps, forecasts).reshape(shape)


def select_next_view(candidates: Sequence[CandidateView], maps=None, forecasts=None) -> int:
    """Id of the candidate with the largest mean (calibrated) uncertainty.

    With ``maps`` and ``forecasts`` (one entry per candidate) the uncertainty
    map is recomputed under the calibration maps; otherwise each candidate's
    stored ``umap`` is used.  Ties go to the lowest id.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("no candidate views")
    if (maps is None) != (forecasts is None):
        raise ValidationError("maps and forecasts must be given together")
    scores = []
    for i, cand in enumerate(candidates):
        if maps is None:
            u = cand.umap
        else:
            u = calibrated_umap(maps[i], forecasts[i], cand.umap.shape)
        scores.append((-float(np.mean(u)), cand.id))
    return min(scores)[1]
