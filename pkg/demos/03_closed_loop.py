"""
Greedy pushing toward a target
==============================

Close the loop: at each step, predict the image after every action of the
grid, score each prediction by the image Lyapunov function (mean distance of
mass to the target), and execute the best push on the simulator.

The oracle predictor uses the simulator itself, so it shows what a perfect
model would achieve; swap in ``LinearPredictor(load_model(...))`` after
running ``pileforesight train`` to use a learned model.
"""
from pileforesight.control import (ActionGrid, OraclePredictor, TargetSet, build_distance_field,
                                   rollout)
from pileforesight.sim import SimConfig, spawn_scene

target = TargetSet.square(32)                 # centered square, 0.4 on a side
field = build_distance_field(target)
grid = ActionGrid(positions=6, n_angles=8)      # coarser than the default, for speed

scene = spawn_scene(SimConfig(), 30, (0.1, 0.1, 0.9, 0.9), seed=4)
log = rollout(scene, OraclePredictor(), field, grid, max_steps=15)

print("V initial %.4f" % log.v_initial)
for s in log.steps:
    print("push %2d  predicted %.4f  realized %.4f" % (s.step + 1, s.v_pred, s.v_real))
print("status:", log.status)
