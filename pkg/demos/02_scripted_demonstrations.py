"""Collect scripted demonstrations and store them in an MMDS dataset.

The expert profile is deterministic waypoint control; the suboptimal profile
adds motion noise, dithering, and pauses, imitating a novice teleoperator.
"""

import numpy as np

from momart.data import DatasetReader, write_dataset
from momart.operators import EXPERT, SUBOPTIMAL, generate_demo
from momart.sim import TaskSpec

task = TaskSpec("setup-dishwasher")

expert = [generate_demo(task, seed, EXPERT) for seed in range(8)]
sloppy = [generate_demo(task, seed, SUBOPTIMAL) for seed in range(8)]

print("expert   lengths:", [e.length for e in expert])
print("sloppy   lengths:", [e.length for e in sloppy])
print("expert successes:", sum(e.success for e in expert), "/ 8")
print("sloppy successes:", sum(e.success for e in sloppy), "/ 8")

write_dataset("demo_out_expert.mmds", expert,
              header_extra={"task": task.task_id, "profile": "expert"})
reader = DatasetReader("demo_out_expert.mmds")
mean, std = reader.norm_stats
print(f"dataset: {len(reader)} episodes, obs_dim {reader.obs_dim}, "
      f"std range [{std.min():.2e}, {std.max():.2f}]")

# Episodes replay bit-exactly: the sim is deterministic and stored actions
# are exactly the applied (float32-quantized) actions.
ep = reader.read_episode(0)
from momart.evaluation import run_rollout
rec = run_rollout(None, task, env_seed=ep.seed, replay_actions=ep.actions,
                  collect_obs=True)
assert rec.obs_trace.tobytes() == ep.obs.tobytes()
print("bit-exact replay: ok")
