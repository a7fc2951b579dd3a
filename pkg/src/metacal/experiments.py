"""End-to-end protocols on synthetic scenes.

These functions glue the building blocks into the evaluations used by the
command-line tool, the acceptance suite and the demo scripts.  Every protocol
is deterministic given its seeds.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .curves import (
    DEFAULT_COMPONENTS,
    DEFAULT_GRID,
    PcaCurveBasis,
    curve_from_map,
    fit_pca_basis,
    grid,
    monotonize_curve,
    project_curve,
    reconstruct_curve,
)
from .meta import (
    FeatureConfig,
    MetaCalibratorModel,
    TrainingConfig,
    extract_baseline_features,
    init_mlp,
    mlp_forward,
    mse_loss_and_grads,
    train_meta_calibrator,
    train_mlp,
)
from .mixture import ForecastBatch, RayForecast, channel_nll, mixture_quantile_array
from .planning import gamma_grid, information_gain_curve
from .recalibration import (
    IsotonicMap,
    apply_maps,
    calibration_error,
    fit_channel_maps,
    iqr_uncertainty,
    _per_channel,
)
from .scenes import (
    SceneConfig,
    SyntheticScene,
    draw_observations,
    generate_scene,
    ground_truth_curve,
    render_scene_outputs,
    scene_levels,
)

BASIS_SCENES = 21


# ---------------------------------------------------------------- building blocks


def resample_map(cal_map: IsotonicMap, m: int = DEFAULT_GRID) -> IsotonicMap:
    """Re-express a map by its values on an ``m``-point grid.

    A map fitted to thousands of raw recalibration pairs has a very noisy
    derivative; sampling it on the curve grid keeps the calibrated density
    usable for likelihood evaluation.
    """
    return monotonize_curve(curve_from_map(cal_map, m).values)


def oracle_maps(scene: SyntheticScene, truth=None, m: int = DEFAULT_GRID, pooled: bool = False):
    """Per-channel maps fitted on the scene's own observed pixels (or ``truth``)."""
    return tuple(resample_map(cm, m) for cm in fit_channel_maps(scene_levels(scene, truth), pooled=pooled))


def scene_feature_vector(scene: SyntheticScene, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    image, umap = render_scene_outputs(scene)
    return extract_baseline_features(image, umap, config)


def scene_curve(scene: SyntheticScene, m: int = DEFAULT_GRID, truth=None) -> np.ndarray:
    """Channel-pooled ground-truth curve used as the per-scene regression target."""
    return ground_truth_curve(scene, "pooled", m, truth=truth).values


@dataclass
class ChannelMetrics:
    cal_err_uncal: np.ndarray  # (3,)
    cal_err_cal: np.ndarray
    nll_uncal: np.ndarray
    nll_cal: np.ndarray

    def mean(self) -> dict:
        return {k: float(np.mean(v)) for k, v in vars(self).items()}


def evaluate_maps(scene: SyntheticScene, maps, truth=None) -> ChannelMetrics:
    """Calibration error and NLL per channel, before and after applying ``maps``."""
    truth = scene.truth if truth is None else truth
    levels = scene_levels(scene, truth)
    cal = apply_maps(maps, levels)
    flat = np.asarray(truth).reshape(-1, 3)
    return ChannelMetrics(
        np.array([calibration_error(levels[:, c]) for c in range(3)]),
        np.array([calibration_error(cal[:, c]) for c in range(3)]),
        channel_nll(scene.forecasts, flat),
        channel_nll(scene.forecasts, flat, maps),
    )


# ---------------------------------------------------------------- oracle recalibration


def oracle_recalibration_trial(k: float = 2.0, seed: int = 0, fit_draw: int = 0, eval_draw: int = 1, **scene_kw) -> dict:
    """Fit per-channel maps on one pixel draw, evaluate on an independent draw of the same scene."""
    scene = generate_scene(SceneConfig(k=k, seed=seed, **scene_kw))
    maps = oracle_maps(scene, draw_observations(scene, fit_draw))
    metrics = evaluate_maps(scene, maps, draw_observations(scene, eval_draw))
    out = metrics.mean()
    out["reduction"] = 1.0 - out["cal_err_cal"] / out["cal_err_uncal"]
    return out


# ---------------------------------------------------------------- basis and meta-calibrator


def fit_basis_from_scenes(scenes, n: int = DEFAULT_COMPONENTS, m: int = DEFAULT_GRID) -> PcaCurveBasis:
    return fit_pca_basis([scene_curve(s, m) for s in scenes], n)


def meta_dataset(scenes, basis: PcaCurveBasis, features: FeatureConfig = FeatureConfig()):
    return [(scene_feature_vector(s, features), project_curve(basis, scene_curve(s, basis.m_grid))) for s in scenes]


def train_meta_on_scenes(
    train_scenes,
    basis: PcaCurveBasis | None = None,
    config: TrainingConfig | None = None,
    features: FeatureConfig = FeatureConfig(),
    n_basis_scenes: int = BASIS_SCENES,
    n_components: int = DEFAULT_COMPONENTS,
    m: int = DEFAULT_GRID,
):
    """Fit the curve basis (if not given) on the first ``n_basis_scenes`` scenes, then train the regressor."""
    train_scenes = list(train_scenes)
    if basis is None:
        basis_set = train_scenes[:n_basis_scenes]
        if len(basis_set) < 2:
            raise ValueError("need at least two scenes to fit the curve basis")
        basis = fit_basis_from_scenes(basis_set, min(n_components, len(basis_set) - 1), m)
    config = config or TrainingConfig(seed=0)
    return train_meta_calibrator(meta_dataset(train_scenes, basis, features), basis, config, features)


@dataclass
class HeldOutResult:
    k: float
    cal_err_uncal: float
    cal_err_meta: float
    cal_err_oracle: float
    curve_rms: float

    @property
    def ratio_to_uncal(self) -> float:
        return self.cal_err_meta / self.cal_err_uncal

    @property
    def ratio_to_oracle(self) -> float:
        return self.cal_err_meta / self.cal_err_oracle


def evaluate_meta(model: MetaCalibratorModel, scene: SyntheticScene, oracle_draw: int = 1) -> HeldOutResult:
    """Score a predicted map on a held-out scene's observed pixels.

    The oracle reference is a per-channel map fitted on an independent pixel
    draw of the same scene, i.e. what held-out calibration data would give.
    """
    image, umap = render_scene_outputs(scene)
    pred_map = model.map_from_features(extract_baseline_features(image, umap, model.features))
    levels = scene_levels(scene)
    orc = oracle_maps(scene, draw_observations(scene, oracle_draw), model.basis.m_grid)
    rms = float(np.sqrt(np.mean((pred_map(grid(model.basis.m_grid)) - scene_curve(scene, model.basis.m_grid)) ** 2)))
    return HeldOutResult(
        scene.config.k,
        float(np.mean([calibration_error(levels[:, c]) for c in range(3)])),
        float(np.mean([calibration_error(v) for v in apply_maps(pred_map, levels).T])),
        float(np.mean([calibration_error(v) for v in apply_maps(orc, levels).T])),
        rms,
    )


def direct_curve_model(train_scenes, config: TrainingConfig, features: FeatureConfig = FeatureConfig(), m: int = DEFAULT_GRID):
    """Baseline regressor predicting all ``m`` curve values directly (no PCA)."""
    X = np.array([scene_feature_vector(s, features) for s in train_scenes])
    Y = np.array([scene_curve(s, m) for s in train_scenes])
    return train_mlp(X, Y, config)


def direct_vs_pca(train_scenes, test_scenes, config: TrainingConfig | None = None, m: int = DEFAULT_GRID):
    """Held-out curve RMS error of the PCA-coefficient model and the direct ``m``-output model.

    Both predictions are monotonised before scoring against the scene's
    ground-truth curve.  Returns a list of ``(k, rms_pca, rms_direct)``.
    """
    config = config or TrainingConfig(seed=0)
    meta, _ = train_meta_on_scenes(train_scenes, config=config, m=m)
    direct, _ = direct_curve_model(train_scenes, config, meta.features, m)
    g = grid(m)
    rows = []
    for s in test_scenes:
        feat = scene_feature_vector(s, meta.features)
        truth_curve = scene_curve(s, m)
        pca_map = meta.map_from_features(feat)
        direct_map = monotonize_curve(mlp_forward(direct, feat))
        rows.append(
            (
                s.config.k,
                float(np.sqrt(np.mean((pca_map(g) - truth_curve) ** 2))),
                float(np.sqrt(np.mean((direct_map(g) - truth_curve) ** 2))),
            )
        )
    return rows


def gradient_check(seed: int, h: float = 1e-5) -> float:
    """Worst relative gap between backprop and central differences on a random small network.

    Layer widths, batch size and data are drawn from ``seed``.  The relative
    error of each parameter array is ``|g - g_fd| / max(|g|, |g_fd|)`` in the
    2-norm; the largest over all arrays is returned.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(2, 7, size=int(rng.integers(3, 5))))
    model = init_mlp(dims, seed, leaky_slope=float(rng.uniform(0.01, 0.3)))
    for b in model.biases:
        b += rng.normal(0.0, 0.1, b.shape)
    x = rng.normal(size=(int(rng.integers(1, 6)), dims[0]))
    y = rng.normal(size=(len(x), dims[-1]))
    _, dW, db = mse_loss_and_grads(model, x, y)
    worst = 0.0
    for params, grads in ((model.weights, dW), (model.biases, db)):
        for p, g in zip(params, grads):
            fd = np.empty_like(p)
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = mse_loss_and_grads(model, x, y)[0]
                p[idx] = orig - h
                down = mse_loss_and_grads(model, x, y)[0]
                p[idx] = orig
                fd[idx] = (up - down) / (2 * h)
            scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
            worst = max(worst, float(np.linalg.norm(g - fd) / scale))
    return worst


# ---------------------------------------------------------------- planning


def information_gain_comparison(scene: SyntheticScene, maps=None, gammas=None):
    """Information-gain curves ranked by uncalibrated and by calibrated uncertainty.

    ``maps`` defaults to the scene's own per-channel oracle maps.
    """
    gammas = gamma_grid() if gammas is None else gammas
    maps = oracle_maps(scene) if maps is None else maps
    pred, u_uncal = render_scene_outputs(scene)
    _, u_cal = render_scene_outputs(scene, maps)
    uncal = information_gain_curve(pred, scene.truth, u_uncal, gammas)
    cal = information_gain_curve(pred, scene.truth, u_cal, gammas)
    return np.array([g for g, _ in uncal]), np.array([v for _, v in uncal]), np.array([v for _, v in cal])


# ---------------------------------------------------------------- training-set overfitting


def memorising_forecasts(scene: SyntheticScene, memorisation: float) -> ForecastBatch:
    """Forecasts whose locations are pulled toward the observed colours.

    Stands in for a renderer evaluated on its own training pixels: with
    ``memorisation = 1`` every forecast is centred on the observation.
    """
    f = scene.forecasts
    obs = scene.truth.reshape(-1, 3)[..., None]
    locs = (1.0 - memorisation) * f.locations + memorisation * obs
    return ForecastBatch(f.weights, locs, f.scales)


def train_overfit_demo(ks=(0.5, 2.0, 3.0), seed: int = 0, memorisation: float = 0.8, height: int = 64, width: int = 64):
    """Fit maps on training pixels and score them on disjoint test pixels.

    Each scene's pixels are split in half by a seeded permutation.  Training
    pixels see memorising forecasts; test pixels see the ordinary ones.
    Returns one dict per scene with the test calibration error under the
    identity map and under the training-fitted maps.
    """
    rows = []
    for i, k in enumerate(ks):
        scene = generate_scene(SceneConfig(height=height, width=width, k=float(k), seed=seed + i))
        perm = np.random.default_rng([seed, i, 2]).permutation(scene.n_pixels)
        train_idx, test_idx = perm[: scene.n_pixels // 2], perm[scene.n_pixels // 2:]
        obs = scene.truth.reshape(-1, 3)
        train_levels = memorising_forecasts(scene, memorisation).subset(train_idx).cdf(obs[train_idx])
        maps = fit_channel_maps(train_levels)
        test_levels = scene.forecasts.subset(test_idx).cdf(obs[test_idx])
        rows.append(
            {
                "scene": i,
                "k": float(k),
                "cal_err_identity": float(np.mean([calibration_error(v) for v in test_levels.T])),
                "cal_err_train_fit": float(np.mean([calibration_error(v) for v in apply_maps(maps, test_levels).T])),
            }
        )
    return rows


# ---------------------------------------------------------------- uncertainty cost


def calibrated_variance_sampling(maps, ray: RayForecast, rng: np.random.Generator, n: int = 10_000) -> float:
    """Channel-averaged variance of the calibrated distribution from ``n`` inverse-transform draws."""
    out = 0.0
    for cal_map, ch in zip(_per_channel(maps), ray.channels):
        u = rng.random(n)
        p = np.clip(cal_map.inverse(u), 1e-15, 1 - 1e-15)
        x = mixture_quantile_array(ch.weights, ch.locations, ch.scales, p)
        out += float(np.var(x))
    return out / 3.0


def calibrated_variance_integration(maps, ray: RayForecast, n: int = 10_000) -> float:
    """Channel-averaged variance from the numerically differentiated calibrated CDF on an ``n``-point grid."""
    out = 0.0
    for cal_map, ch in zip(_per_channel(maps), ray.channels):
        lo = float(np.min(ch.locations - 40 * ch.scales))
        hi = float(np.max(ch.locations + 40 * ch.scales))
        x = np.linspace(lo, hi, n)
        F = cal_map(ch.cdf(x))
        dens = np.gradient(F, x)
        mean = np.trapezoid(x * dens, x)
        out += float(np.trapezoid((x - mean) ** 2 * dens, x))
    return out / 3.0


def bench_iqr(reps: int = 1000, sampling_reps: int | None = None, n_samples: int = 10_000, seed: int = 0, k: float = 2.0):
    """Time three per-pixel uncertainty measures on the same calibrated distributions.

    Returns ``{method: mean seconds per pixel}`` for ``iqr_interpolation``,
    ``variance_sampling`` and ``variance_integration``.
    """
    scene = generate_scene(SceneConfig(height=16, width=16, family="shape-heterogeneous", k=k, seed=seed))
    maps = oracle_maps(scene)
    rays = [scene.forecasts.ray(i) for i in range(len(scene.forecasts))]
    sampling_reps = reps if sampling_reps is None else sampling_reps
    rng = np.random.default_rng(seed)

    def clock(fn, n):
        start = time.perf_counter()
        for i in range(n):
            fn(rays[i % len(rays)])
        return (time.perf_counter() - start) / n

    return {
        "iqr_interpolation": clock(lambda r: iqr_uncertainty(maps, r), reps),
        "variance_sampling": clock(lambda r: calibrated_variance_sampling(maps, r, rng, n_samples), sampling_reps),
        "variance_integration": clock(lambda r: calibrated_variance_integration(maps, r, n_samples), sampling_reps),
    }
