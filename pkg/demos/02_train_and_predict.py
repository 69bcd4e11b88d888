"""Train a small motion model on curvy synthetic trajectories and compare
its one-frame-ahead accuracy against the linear baselines.

Runs in about a minute on a laptop (the config is deliberately tiny).
"""
from ddmot.data_io import SyntheticSpec, build_training_set, synth_sequence
from ddmot.diffusion import TrainConfig, train
from ddmot.hminet import HMINet, ModelConfig
from ddmot.metrics import predictor_iou_diagnostic
from ddmot.predictors import ConstantVelocityPredictor, D2MPPredictor, KalmanPredictor, PredictorConfig

spec = SyntheticSpec(program="sinusoidal", object_count=12, length=100, amplitude=0.12, period=16, speed=0.004)
train_trajs = synth_sequence(spec, seed=0).trajectories + synth_sequence(spec, seed=1).trajectories
held_trajs = synth_sequence(spec, seed=999).trajectories

dataset = build_training_set(train_trajs, n=5)
print(f"training on {len(dataset)} (window, next-motion) pairs from {len(train_trajs)} trajectories")

config = ModelConfig(token_dim=32, n_heads=4, n_condition_layers=1, n_fusion_blocks=1)
model = HMINet.init(config, seed=0)
losses = train(dataset, model, TrainConfig(steps=1200, batch_size=128, learning_rate=3e-4, seed=1))
print(f"loss: {losses[0]:.5f} -> {losses[-1]:.6f} over {len(losses)} steps\n")

print("mean IoU of one-frame-ahead predictions on held-out trajectories:")
rows = [
    ("constant velocity", ConstantVelocityPredictor()),
    ("kalman filter", KalmanPredictor()),
    ("diffusion model", D2MPPredictor(model, PredictorConfig(kind="d2mp", seed=5))),
]
for name, predictor in rows:
    report = predictor_iou_diagnostic(held_trajs, predictor)
    print(f"   {name:18s} {report.mean:.4f}")
print("\nthe sine sweep punishes any straight-line extrapolation; the")
print("conditional model reads curvature out of the 5-frame history.")
