"""Calibrated per-pixel uncertainty for Laplacian-mixture colour forecasts.

Recalibration with isotonic maps, a PCA basis for calibration curves, a
small MLP meta-calibrator that predicts a scene's curve from image
statistics, synthetic scenes with known miscalibration, and an
uncertainty-driven view planner.
"""
from .errors import DomainError, TrainingDivergedError, ValidationError
from .mixture import (
    CHANNELS,
    ForecastBatch,
    LaplacianMixture1D,
    RayForecast,
    channel_nll,
    forecast_nll,
    mixture_cdf,
    mixture_moments,
    mixture_pdf,
    mixture_quantile,
    mixture_quantile_array,
    mixture_sample,
)
from .recalibration import (
    ConfidencePair,
    IsotonicMap,
    build_recalibration_dataset,
    calibrated_quantile,
    calibration_error,
    empirical_confidence,
    fit_channel_maps,
    fit_isotonic,
    iqr_uncertainty,
    iqr_uncertainty_batch,
    pava,
    predicted_confidence,
    scene_calibration_error,
)
from .curves import (
    CalibrationCurve,
    PcaCurveBasis,
    curve_from_map,
    discretize_curve,
    fit_pca_basis,
    monotonize_curve,
    project_curve,
    reconstruct_curve,
)
from .scenes import (
    SceneConfig,
    SceneCorpus,
    SyntheticScene,
    analytic_distortion_curve,
    generate_scene,
    ground_truth_curve,
    load_scene,
    make_corpus,
    render_scene_outputs,
    save_scene,
)
from .meta import (
    FeatureConfig,
    MetaCalibratorModel,
    MlpModel,
    TrainingConfig,
    extract_baseline_features,
    init_mlp,
    load_feature_file,
    load_model,
    mlp_forward,
    mse_loss_and_grads,
    predict_calibration_map,
    save_model,
    train_meta_calibrator,
    train_mlp,
)
from .planning import CandidateView, gamma_grid, information_gain_curve, psnr, select_next_view

__version__ = "0.1.0"
