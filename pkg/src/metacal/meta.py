"""Meta-calibrator: scene features -> PCA curve coefficients -> calibration map.

The regressor is a small fully connected network with leaky-ReLU hidden
layers, trained full-batch with Adam on raw features and standardised
targets.
Everything is plain numpy so that training is deterministic given a seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .curves import PcaCurveBasis, monotonize_curve, reconstruct_curve
from .errors import TrainingDivergedError, ValidationError
from .recalibration import IsotonicMap

SCALE_FLOOR = 1e-12


# ---------------------------------------------------------------- features


@dataclass(frozen=True)
class FeatureConfig:
    image_bins: int = 16
    umap_bins: int = 16

    @property
    def dim(self) -> int:
        return 6 + 3 * self.image_bins + 3 + 4 + self.umap_bins + 1


def _moments(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # mean and std taken about the first sample: constant inputs give exact
    # values at any resolution
    d = a - a[0]
    md = np.mean(d, axis=0)
    return a[0] + md, np.sqrt(np.maximum(np.mean(d**2, axis=0) - md**2, 0.0))


def extract_baseline_features(image, umap, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Resolution-independent summary statistics of a rendered image and its uncertainty map.

    Order: per-channel mean and std (6); per-channel ``image_bins`` histogram on
    [0, 1] (3 * image_bins); per-channel mean absolute horizontal plus vertical
    difference (3); uncertainty mean, std, max, 90th percentile (4);
    uncertainty histogram on [0, max] (umap_bins); ``log(1 + mean)`` (1).
    """
    image = np.asarray(image, dtype=float)
    umap = np.asarray(umap, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3 or umap.shape != image.shape[:2]:
        raise ValidationError(f"image {image.shape} and uncertainty map {umap.shape} are not congruent")
    if min(umap.shape) < 2:
        raise ValidationError("need at least 2x2 pixels")
    if np.any(~np.isfinite(image)) or np.any(~np.isfinite(umap)) or np.any(umap < 0):
        raise ValidationError("image must be finite and the uncertainty map nonnegative")

    pix = image.reshape(-1, 3)
    parts = list(_moments(pix))
    for c in range(3):
        h, _ = np.histogram(np.clip(pix[:, c], 0.0, 1.0), bins=config.image_bins, range=(0.0, 1.0))
        parts.append(h / h.sum())
    dx = np.abs(np.diff(image, axis=1)).mean(axis=(0, 1))
    dy = np.abs(np.diff(image, axis=0)).mean(axis=(0, 1))
    parts.append(dx + dy)

    u = umap.ravel()
    umax = float(u.max())
    umean, ustd = _moments(u)
    parts.append(np.array([umean, ustd, umax, np.percentile(u, 90)]))
    if umax > 0:
        h, _ = np.histogram(u, bins=config.umap_bins, range=(0.0, umax))
    else:
        h = np.zeros(config.umap_bins)
        h[0] = len(u)
    parts.append(h / h.sum())
    parts.append([np.log1p(umean)])
    return np.concatenate(parts)


def scene_features(views, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Average of per-view feature vectors for ``views = [(image, umap), ...]``."""
    views = list(views)
    if not views:
        raise ValidationError("need at least one view")
    return np.mean([extract_baseline_features(img, um, config) for img, um in views], axis=0)


def load_feature_file(path, dim: int | None = None) -> np.ndarray:
    """Read comma-separated feature vectors, one scene per line."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        rows.append(row)
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    if len({len(r) for r in rows}) != 1:
        raise ValidationError(f"{path}: rows have different lengths")
    arr = np.asarray(rows)
    if dim is not None and arr.shape[1] != dim:
        raise ValidationError(f"{path}: expected {dim} values per row, got {arr.shape[1]}")
    if np.any(~np.isfinite(arr)):
        raise ValidationError(f"{path}: non-finite feature values")
    return arr


def write_feature_file(path, features) -> None:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    Path(path).write_text("".join(",".join(f"{v:.9g}" for v in row) + "\n" for row in features))


# ---------------------------------------------------------------- network


@dataclass(eq=False)
class MlpModel:
    """Weights are stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    leaky_slope: float = 0.01
    target_mean: np.ndarray | None = None
    target_scale: np.ndarray | None = None

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValidationError("need one bias per weight matrix")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValidationError("layer dimensions do not chain")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValidationError("bias length must equal layer output width")
        if not 0 < self.leaky_slope < 1:
            raise ValidationError("leaky slope must lie in (0, 1)")
        d_out = self.layer_dims[-1]
        self.target_mean = np.zeros(d_out) if self.target_mean is None else np.asarray(self.target_mean, float)
        self.target_scale = np.ones(d_out) if self.target_scale is None else np.asarray(self.target_scale, float)
        if self.target_mean.shape != (d_out,) or self.target_scale.shape != (d_out,):
            raise ValidationError("target standardisation has the wrong length")
        if np.any(self.target_scale <= 0):
            raise ValidationError("target scales must be positive")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "leaky_slope": self.leaky_slope,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "target_mean": self.target_mean.tolist(),
            "target_scale": self.target_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        model = cls(
            [np.asarray(w, dtype=float).reshape(a, b) for w, a, b in zip(d["weights"], d["layer_dims"], d["layer_dims"][1:])],
            d["biases"],
            d["leaky_slope"],
            d["target_mean"],
            d["target_scale"],
        )
        if list(model.layer_dims) != list(d["layer_dims"]):
            raise ValidationError("layer_dims disagree with the stored weights")
        return model


def leaky_relu(x, slope: float = 0.01):
    return np.where(x >= 0, x, slope * x)


def init_mlp(layer_dims: Sequence[int], seed: int, leaky_slope: float = 0.01) -> MlpModel:
    """Gaussian weights with std ``1 / sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, 1.0 / np.sqrt(a), (a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
    biases = [np.zeros(b) for b in layer_dims[1:]]
    return MlpModel(weights, biases, leaky_slope)


def _forward(model: MlpModel, x: np.ndarray):
    """Raw (standardised-space) forward pass, keeping pre-activations for backprop."""
    acts, pre = [x], []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else leaky_relu(z, model.leaky_slope)
        acts.append(h)
    return h, acts, pre


def standardize_targets(model: MlpModel, theta) -> np.ndarray:
    return (np.asarray(theta, dtype=float) - model.target_mean) / model.target_scale


def destandardize_targets(model: MlpModel, out) -> np.ndarray:
    return np.asarray(out, dtype=float) * model.target_scale + model.target_mean


def mlp_forward(model: MlpModel, feat) -> np.ndarray:
    """Predicted coefficients for one feature vector ``(d,)`` or a batch ``(n, d)``."""
    feat = np.asarray(feat, dtype=float)
    if feat.shape[-1] != model.layer_dims[0]:
        raise ValidationError(f"expected {model.layer_dims[0]} features, got {feat.shape[-1]}")
    out, _, _ = _forward(model, feat)
    return destandardize_targets(model, out)


def mse_loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean squared error in standardised space and its gradients.

    ``y`` is already standardised.  Returns ``(loss, dW, db)``.
    """
    out, acts, pre = _forward(model, x)
    diff = out - y
    loss = float(np.mean(diff**2))
    delta = 2.0 * diff / diff.size
    dW, db = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        if i < len(model.weights) - 1:
            delta = delta * np.where(pre[i] >= 0, 1.0, model.leaky_slope)
        dW.append(acts[i].T @ delta)
        db.append(delta.sum(axis=0))
        delta = delta @ model.weights[i].T
    return loss, dW[::-1], db[::-1]


@dataclass(frozen=True)
class TrainingConfig:
    seed: int
    lr: float = 1e-3
    epochs: int = 2000
    batch: int | None = None  # None -> full batch
    leaky_slope: float = 0.01
    hidden: tuple[int, ...] = (128, 128)


def _scales(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > SCALE_FLOOR, std, 1.0)


def train_mlp(features, targets, config: TrainingConfig) -> tuple[MlpModel, np.ndarray]:
    """Fit a regressor ``features (n, d) -> targets (n, k)`` with Adam.

    Returns the final-epoch model and the per-epoch training loss (the mean
    loss over the epoch's mini-batches, in standardised units).
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(X) == 0 or len(X) != len(Y):
        raise ValidationError("need a non-empty dataset with one target per feature vector")
    if np.any(~np.isfinite(X)) or np.any(~np.isfinite(Y)):
        raise ValidationError("features and targets must be finite")
    dims = (X.shape[1], *config.hidden, Y.shape[1])
    model = init_mlp(dims, config.seed, config.leaky_slope)
    model.target_mean, model.target_scale = _scales(Y)
    Ys = standardize_targets(model, Y)

    rng = np.random.default_rng([config.seed, 1])
    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n = len(X)
    batch = n if config.batch is None else max(1, min(config.batch, n))
    losses = np.empty(config.epochs)
    step = 0
    for epoch in range(config.epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        total = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, dW, db = mse_loss_and_grads(model, X[idx], Ys[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}")
            step += 1
            for p, g, a, v in zip(params, dW + db, m1, m2):
                a *= beta1
                a += (1 - beta1) * g
                v *= beta2
                v += (1 - beta2) * g * g
                p -= config.lr * (a / (1 - beta1**step)) / (np.sqrt(v / (1 - beta2**step)) + eps)
            total += loss
            n_batches += 1
        losses[epoch] = total / n_batches
    return model, losses


# ---------------------------------------------------------------- meta-calibrator


@dataclass(eq=False)
class MetaCalibratorModel:
    features: FeatureConfig
    mlp: MlpModel
    basis: PcaCurveBasis

    def __post_init__(self):
        if self.mlp.layer_dims[-1] != self.basis.n_components:
            raise ValidationError("network output size must equal the number of basis components")
        if self.mlp.layer_dims[0] != self.features.dim:
            raise ValidationError("network input size must equal the feature dimension")

    def predict_theta(self, feat) -> np.ndarray:
        return mlp_forward(self.mlp, feat)

    def map_from_features(self, feat) -> IsotonicMap:
        return monotonize_curve(reconstruct_curve(self.basis, self.predict_theta(feat)))

    def to_dict(self) -> dict:
        return {
            "format": "metacal.meta-calibrator/1",
            "extractor": {"name": "baseline", **asdict(self.features)},
            "mlp": self.mlp.to_dict(),
            "basis": self.basis.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetaCalibratorModel":
        ext = dict(d["extractor"])
        ext.pop("name", None)
        return cls(FeatureConfig(**ext), MlpModel.from_dict(d["mlp"]), PcaCurveBasis.from_dict(d["basis"]))


def train_meta_calibrator(
    dataset, basis: PcaCurveBasis, config: TrainingConfig, features: FeatureConfig = FeatureConfig()
) -> tuple[MetaCalibratorModel, np.ndarray]:
    """Train on ``dataset = [(feature_vector, theta), ...]``; returns the model and loss trace."""
    dataset = list(dataset)
    if not dataset:
        raise ValidationError("empty training set")
    X = np.array([f for f, _ in dataset], dtype=float)
    Y = np.array([t for _, t in dataset], dtype=float)
    if Y.shape[1] != basis.n_components:
        raise ValidationError(f"targets have {Y.shape[1]} coefficients, basis has {basis.n_components}")
    if X.shape[1] != features.dim:
        raise ValidationError(f"features have length {X.shape[1]}, extractor produces {features.dim}")
    mlp, losses = train_mlp(X, Y, config)
    return MetaCalibratorModel(features, mlp, basis), losses


def predict_calibration_map(model: MetaCalibratorModel, image, umap) -> IsotonicMap:
    """Calibration map for a scene from its rendered image and uncalibrated uncertainty map alone."""
    return model.map_from_features(extract_baseline_features(image, umap, model.features))


def save_model(model: MetaCalibratorModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path) -> MetaCalibratorModel:
    return MetaCalibratorModel.from_dict(json.loads(Path(path).read_text()))
