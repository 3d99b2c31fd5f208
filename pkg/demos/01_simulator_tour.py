"""Tour of the planar kitchen: layouts, tasks, observations, articulation.

Writes a few top-down renders to ./demo_out/ so you can see what the robot
sees and where things are.
"""

from pathlib import Path

import numpy as np

from momart.sim import KitchenSim, TaskSpec, to_ppm
from momart.sim.world import DOOR_MAX

OUT = Path("demo_out")
OUT.mkdir(exist_ok=True)

# Every task/seed pair is a deterministic world: same bytes every time.
env = KitchenSim(TaskSpec("cleanup-dishwasher"), seed=7)
twin = KitchenSim(TaskSpec("cleanup-dishwasher"), seed=7)
assert env.state.to_bytes() == twin.state.to_bytes()
print("deterministic reset: ok")

(OUT / "cleanup_canonical.ppm").write_bytes(to_ppm(env.render("topdown-rgb")))

# The observation is raster + scan + proprioception, all in [0, 1].
ob = env.observe()
print(f"raster {ob.raster.shape}, scan {ob.scan.shape}, proprio {ob.proprio.shape}")
print(f"vector dim {ob.vector().shape[0]}, range [{ob.vector().min():.2f}, {ob.vector().max():.2f}]")

# Drive forward for a second and watch the pose change.
for _ in range(20):
    env.step(np.array([1.0, 0.1, 0, 0, -1, -1]))
print(f"pose after 1 s of driving: ({env.state.base_x:.2f}, {env.state.base_y:.2f})")

# Articulation: drop the robot at the dishwasher and pull the tray out.
env2 = KitchenSim(TaskSpec("setup-dishwasher"), seed=3)
s = env2.state
s.base_x, s.base_y = env2.layout.dishwasher.point(0.55, 0.15)
s.theta = np.arctan2(*reversed([-env2.layout.dishwasher.outward[0],
                                -env2.layout.dishwasher.outward[1]]))
s.door_angle = DOOR_MAX
hx, hy = env2.layout.tray_handle(0.0)
from momart.sim.geometry import rotate
s.ee_dx, s.ee_dy = rotate(hx - s.base_x, hy - s.base_y, -s.theta)
env2.step(np.array([0, 0, 0, 0, 1.0, -1]))        # close on the handle
ox, oy = env2.layout.dishwasher.outward
for _ in range(25):
    dx, dy = rotate(ox, oy, -s.theta)
    env2.step(np.array([0, 0, dx, dy, 1.0, -1]))  # pull outward
print(f"tray extension after pulling: {s.tray_ext:.2f}")
(OUT / "tray_out.ppm").write_bytes(to_ppm(env2.render("topdown-rgb")))

# The swapped layout relocates the dishwasher, dresser, and sink.
swapped = KitchenSim(TaskSpec("setup-dishwasher", layout_variant="swapped"), seed=3)
(OUT / "swapped_layout.ppm").write_bytes(to_ppm(swapped.render("topdown-rgb")))
print("renders written to", OUT)
