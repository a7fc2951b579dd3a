"""Predicting a scene's calibration map from its rendered outputs.

A meta-calibrator is trained on synthetic scenes with known distortion.
For each held-out scene it sees only the predicted image and uncertainty
map, predicts PCA coefficients, and its map is compared against the
uncalibrated forecasts and a map fitted with access to ground truth.
"""
from metacal import TrainingConfig, make_corpus
from metacal.experiments import evaluate_meta, train_meta_on_scenes

corpus = make_corpus(30, 5, seed=7)
model, losses = train_meta_on_scenes(corpus.train_scenes, config=TrainingConfig(seed=0))
print(f"training loss {losses[0]:.3f} -> {losses[-1]:.2e}")

print("   k   uncal    meta  oracle  curve_rms")
for scene in corpus.test_scenes:
    r = evaluate_meta(model, scene)
    print(f"{r.k:5.2f}  {r.cal_err_uncal:.4f}  {r.cal_err_meta:.4f}  {r.cal_err_oracle:.4f}  {r.curve_rms:.4f}")
