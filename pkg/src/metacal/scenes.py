"""Synthetic scenes with known miscalibration.

Each pixel has a *true* colour distribution ``Laplace(field, base_scale)`` per
channel.  The observed colour is one draw from it (clamped to [0, 1]); the
forecast is a deliberately distorted version of the true distribution, so the
calibration curve of a "scale" scene is known in closed form.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .curves import DEFAULT_GRID, CalibrationCurve, curve_from_map
from .errors import DomainError, ValidationError
from .mixture import ForecastBatch
from .recalibration import (
    IsotonicMap,
    _channel_index,
    fit_isotonic,
    iqr_uncertainty_batch,
    recalibration_arrays,
)

FAMILIES = ("scale", "shape-heterogeneous")
N_SINUSOIDS = 6
FIELD_RANGE = (0.05, 0.95)
BIMODAL_OFFSET = 0.15
BIMODAL_SCALE = 0.05


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    family: str = "scale"
    k: float = 1.0
    base_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ValidationError("scenes need at least 4x4 pixels")
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.k > 0 or not self.base_scale > 0:
            raise ValidationError("k and base_scale must be positive")


@dataclass(eq=False)
class SyntheticScene:
    config: SceneConfig
    field: np.ndarray  # (H, W, 3) location of the true distribution
    truth: np.ndarray  # (H, W, 3) observed colours
    forecasts: ForecastBatch  # H*W rays, row-major
    shape_mask: np.ndarray | None = None  # (H, W) True where the forecast is bimodal

    @property
    def shape(self) -> tuple[int, int]:
        return self.config.height, self.config.width

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def n_pixels(self) -> int:
        return self.config.height * self.config.width

    def truth_flat(self) -> np.ndarray:
        return self.truth.reshape(-1, 3)


def analytic_distortion_curve(k: float, p):
    """Empirical frequency of level ``p`` for a Laplace forecaster whose scale is ``k`` times the true one."""
    if not k > 0:
        raise ValidationError("k must be positive")
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise DomainError("p must lie in [0, 1]")
    lower = 0.5 * (2.0 * np.minimum(p_arr, 0.5)) ** k
    upper = 1.0 - 0.5 * (2.0 * (1.0 - np.maximum(p_arr, 0.5))) ** k
    out = np.where(p_arr <= 0.5, lower, upper)
    return float(out) if out.ndim == 0 else out


def smooth_field(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Per-channel sum of random sinusoids mapped affinely onto ``FIELD_RANGE``."""
    v, u = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij")
    out = np.empty((height, width, 3))
    lo, hi = FIELD_RANGE
    for c in range(3):
        amp = rng.uniform(0.5, 1.0, N_SINUSOIDS)
        freq = rng.uniform(-3.0, 3.0, (N_SINUSOIDS, 2))
        phase = rng.uniform(0.0, 2 * np.pi, N_SINUSOIDS)
        f = sum(a * np.sin(2 * np.pi * (fx * u + fy * v) + ph) for a, (fx, fy), ph in zip(amp, freq, phase))
        span = f.max() - f.min()
        out[..., c] = 0.5 * (lo + hi) if span == 0 else lo + (hi - lo) * (f - f.min()) / span
    return out


def draw_observations(scene: SyntheticScene, draw: int) -> np.ndarray:
    """An independent draw of observed colours from the true distribution.

    Draw 0 is the scene's own ``truth``; other draw indices give independent
    pixel samples of the same scene.
    """
    return _draw(scene.field, scene.config.base_scale, scene.config.seed, draw)


def _draw(field: np.ndarray, base_scale: float, seed: int, draw: int) -> np.ndarray:
    rng = np.random.default_rng([seed, draw])
    return np.clip(field + rng.laplace(0.0, base_scale, field.shape), 0.0, 1.0)


def generate_scene(config: SceneConfig | None = None, **kwargs) -> SyntheticScene:
    config = config or SceneConfig(**kwargs)
    rng = np.random.default_rng(config.seed)
    H, W = config.height, config.width
    n = H * W
    field = smooth_field(rng, H, W)
    truth = _draw(field, config.base_scale, config.seed, 0)
    mu = field.reshape(n, 3)
    wide = config.k * config.base_scale
    if config.family == "scale":
        forecasts = ForecastBatch(np.ones((n, 1)), mu[..., None], np.full((n, 3, 1), wide))
        return SyntheticScene(config, field, truth, forecasts)

    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[: n // 2]] = True
    weights = np.where(mask[:, None], [0.5, 0.5], [1.0, 0.0])
    locs = np.stack([mu, mu], axis=-1)
    locs[mask, :, 0] -= BIMODAL_OFFSET
    locs[mask, :, 1] += BIMODAL_OFFSET
    scales = np.ones((n, 3, 2))
    scales[~mask, :, 0] = wide
    scales[mask] = BIMODAL_SCALE * config.base_scale * config.k
    return SyntheticScene(config, field, truth, ForecastBatch(weights, locs, scales), mask.reshape(H, W))


def render_scene_outputs(scene: SyntheticScene, maps=None) -> tuple[np.ndarray, np.ndarray]:
    """Predicted image (clamped mixture mean) and IQR uncertainty map.

    ``maps`` defaults to the identity, i.e. the uncalibrated uncertainty.
    """
    H, W = scene.shape
    pred = np.clip(scene.forecasts.mean(), 0.0, 1.0).reshape(H, W, 3)
    umap = iqr_uncertainty_batch(maps or IsotonicMap.identity(), scene.forecasts).reshape(H, W)
    return pred, umap


def scene_levels(scene: SyntheticScene, truth=None) -> np.ndarray:
    """Predicted confidence levels ``(H*W, 3)`` of the observed (or supplied) colours."""
    truth = scene.truth if truth is None else truth
    return scene.forecasts.cdf(np.asarray(truth).reshape(-1, 3))


def ground_truth_curve(scene: SyntheticScene, channel="R", m: int = DEFAULT_GRID, truth=None) -> CalibrationCurve:
    """Isotonic calibration curve of the scene's pixels sampled on ``m`` grid points.

    ``channel="pooled"`` fits a single curve to all three channels.
    """
    levels = scene_levels(scene, truth)
    c = _channel_index(channel)
    p, emp = recalibration_arrays(levels if c is None else levels[:, c])
    return curve_from_map(fit_isotonic(np.column_stack([p, emp])), m)


@dataclass
class SceneCorpus:
    train_scenes: list[SyntheticScene]
    test_scenes: list[SyntheticScene]
    config: dict = dc_field(default_factory=dict)


def corpus_configs(
    n_train: int,
    n_test: int,
    seed: int,
    family: str = "scale",
    height: int = 64,
    width: int = 64,
    base_scale: float = 0.1,
    k_range: tuple[float, float] = (0.3, 3.0),
) -> tuple[list[SceneConfig], list[SceneConfig]]:
    """Scene configs with log-uniform ``k`` and distinct per-scene seeds."""
    if n_train < 1 or n_test < 0:
        raise ValidationError("need at least one training scene and a nonnegative test count")
    if not 0 < k_range[0] <= k_range[1]:
        raise ValidationError("k_range must be positive and ordered")
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    seeds: list[int] = []
    while len(seeds) < n:
        s = int(rng.integers(0, 2**31 - 1))
        if s not in seeds:
            seeds.append(s)
    ks = np.exp(rng.uniform(np.log(k_range[0]), np.log(k_range[1]), n))
    cfgs = [
        SceneConfig(height=height, width=width, family=family, k=float(k), base_scale=base_scale, seed=s)
        for s, k in zip(seeds, ks)
    ]
    return cfgs[:n_train], cfgs[n_train:]


def make_corpus(n_train: int, n_test: int, seed: int, **kwargs) -> SceneCorpus:
    train, test = corpus_configs(n_train, n_test, seed, **kwargs)
    return SceneCorpus(
        [generate_scene(c) for c in train],
        [generate_scene(c) for c in test],
        {"n_train": n_train, "n_test": n_test, "seed": seed, **kwargs},
    )


def scene_to_dict(scene: SyntheticScene) -> dict:
    """JSON-ready form; all grids are flattened row-major (pixel, then channel, then component)."""
    f = scene.forecasts
    return {
        "config": asdict(scene.config),
        "layout": "row-major",
        "field": scene.field.ravel().tolist(),
        "truth": scene.truth.ravel().tolist(),
        "shape_mask": None if scene.shape_mask is None else scene.shape_mask.ravel().astype(int).tolist(),
        "forecast": {
            "n_components": f.n_components,
            "weights": f.weights.ravel().tolist(),
            "locations": f.locations.ravel().tolist(),
            "scales": f.scales.ravel().tolist(),
        },
    }


def scene_from_dict(d: dict) -> SyntheticScene:
    config = SceneConfig(**d["config"])
    H, W = config.height, config.width
    n = H * W
    fc = d["forecast"]
    m = int(fc["n_components"])
    try:
        forecasts = ForecastBatch(
            np.asarray(fc["weights"], dtype=float).reshape(n, m),
            np.asarray(fc["locations"], dtype=float).reshape(n, 3, m),
            np.asarray(fc["scales"], dtype=float).reshape(n, 3, m),
        )
        field = np.asarray(d["field"], dtype=float).reshape(H, W, 3)
        truth = np.asarray(d["truth"], dtype=float).reshape(H, W, 3)
    except ValueError as exc:
        raise ValidationError(f"scene arrays do not match the configured size: {exc}") from exc
    if np.any((truth < 0) | (truth > 1)):
        raise ValidationError("observed colours must lie in [0, 1]")
    mask = d.get("shape_mask")
    mask = None if mask is None else np.asarray(mask, dtype=bool).reshape(H, W)
    return SyntheticScene(config, field, truth, forecasts, mask)


def save_scene(scene: SyntheticScene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene)))


def load_scene(path) -> SyntheticScene:
    return scene_from_dict(json.loads(Path(path).read_text()))
