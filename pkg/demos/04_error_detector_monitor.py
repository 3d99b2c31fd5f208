"""The goal-reconstruction error detector and its runtime monitor.

Trains a small detector on scripted demos, shows the reconstruction error on
in-distribution vs. shuffled observation pairs, then walks the monitor state
machine through a scripted error sequence: first error -> recovery, second ->
termination.
"""

import numpy as np

from momart.data import write_dataset
from momart.detector import DetectorConfig, MonitorContext, monitor_step
from momart.operators import EXPERT, generate_dataset
from momart.sim import OBS_DIM, TaskSpec
from momart.training import TrainConfig, load_detector, train_error_detector

task = TaskSpec("setup-dishwasher")
episodes, _ = generate_dataset(task, 12, EXPERT, start_seed=0)
write_dataset("demo_out_det.mmds", episodes)

dc = DetectorConfig.compact(OBS_DIM)
cfg = TrainConfig(epochs=2, steps_per_epoch=250, batch_size=32, lr=1e-3, seed=0)
train_error_detector(cfg, "demo_out_det.mmds", dc, checkpoint_path="demo_out_det.mmck")
model, _ = load_detector("demo_out_det.mmck")

ep = episodes[0]
H = dc.horizon
in_dist = [model.error(ep.obs[t], ep.obs[t + H]) for t in range(0, ep.length - H, 25)]
rng = np.random.default_rng(0)
scrambled = [model.error(ep.obs[t], episodes[3].obs[rng.integers(0, episodes[3].length)])
             for t in range(0, ep.length - H, 25)]
print(f"in-distribution pairs: median eps {np.median(in_dist):.4f}")
print(f"scrambled goal pairs:  median eps {np.median(scrambled):.4f}")

# Monitor state machine on a scripted error stream
cfg2 = DetectorConfig(obs_dim=4, threshold=0.05, error_budget=2, horizon=2)
stream = iter([0.01, 0.01, 0.06, 0.01, 0.07])
ctx = MonitorContext()
obs = np.zeros(4)
while True:
    try:
        eps = next(stream)
    except StopIteration:
        break
    d = monitor_step(ctx, cfg2, None, obs, metric_fn=lambda s, g, e=eps: e)
    print(f"t={ctx.t} eps={d.epsilon} -> {d.kind} (k={ctx.errors})")
    if d.kind == "recover":
        ctx.phase = "monitoring"   # a real rollout would run the maneuver here
    if d.kind == "terminate":
        break
