"""Drive a teleoperation session programmatically (no browser needed).

The same Session object the websocket server ticks at 20 Hz can be driven
synchronously: send messages, tick, inspect frames. Useful for testing
clients and for scripted recordings.

For the real thing:  momart serve --task setup-dishwasher --port 8080 \
                         --out human.mmds --static frontend/dist
then open http://127.0.0.1:8080/
"""

import base64

import numpy as np

from momart.sim import TaskSpec
from momart.teleop import Session, joystick_map

print("joystick mapping samples:")
for u, v in [(0.05, 0.0), (0.0, 1.0), (1.0, 0.0), (0.4, 0.8), (0.9, 0.25)]:
    print(f"  ({u:+.2f}, {v:+.2f}) -> {joystick_map(u, v)}")

session = Session(TaskSpec("setup-dishwasher"), seed=0, out_path="demo_out_human.mmds")
session.handle_message({"type": "record", "op": "start"})
session.handle_message({"type": "joy", "u": 0.0, "v": 1.0})   # full forward

for i in range(60):
    frame = session.tick()
    if i % 20 == 0:
        raster = np.frombuffer(base64.b64decode(frame["ego"]), dtype=np.uint8)
        print(f"tick {frame['t']}: stage {frame['stage']}, "
              f"{int(raster.sum() / 255)} active raster cells")

ack = session.handle_message({"type": "record", "op": "stop"})
print("recorded:", ack)
