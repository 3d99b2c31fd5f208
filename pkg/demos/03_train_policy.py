"""Train a small behavior-cloning policy end to end and watch it roll out.

Uses a reduced budget (20 demos, 3 epochs x 200 steps) so the script finishes
in a few minutes; the acceptance suite runs the full protocol.
"""

from momart.data import write_dataset
from momart.evaluation import run_rollout
from momart.operators import EXPERT, generate_dataset
from momart.policy import PolicyConfig
from momart.sim import OBS_DIM, TaskSpec
from momart.training import TrainConfig, load_policy, train_policy

task = TaskSpec("setup-dishwasher")
episodes, _ = generate_dataset(task, 20, EXPERT, start_seed=0)
write_dataset("demo_out_train.mmds", episodes)

cfg = TrainConfig(epochs=3, steps_per_epoch=200, batch_size=16, lr=1e-4,
                  eval_episodes=10, seed=0, checkpoint_dir="demo_out_ckpts")
pc = PolicyConfig.compact(OBS_DIM, "tiered")
print(f"tiered policy: periods {pc.periods}, horizons {pc.horizons}, "
      f"hidden {pc.hidden}")

result = train_policy(cfg, "demo_out_train.mmds", pc,
                      metrics_path="demo_out_train_log.jsonl")
for entry in result.metrics:
    print(entry)

model, _ = load_policy(result.final_checkpoint)
rec = run_rollout(model, task, env_seed=12345, rollout_seed=0)
print(f"rollout: cause={rec.cause} length={rec.length}")
