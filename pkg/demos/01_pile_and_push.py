"""
Simulating a push on a pile
===========================

Spawn a pile of small convex pieces, push through it once, and look at the
images before and after. Everything the controller sees is such a 32x32
intensity image.
"""
import numpy as np

from pileforesight.geometry import Action
from pileforesight.sim import SimConfig, apply_push, rasterize, spawn_scene

cfg = SimConfig()

# 50 pieces dropped into the middle of the board, reproducible from the seed
scene = spawn_scene(cfg, 50, (0.3, 0.3, 0.7, 0.7), seed=1)

# a push starting left of the pile, heading +x, 0.24 long
push = Action(px=0.2, py=0.5, theta=0.0, length=0.24)
after = apply_push(scene, push, cfg)

before_img, after_img = rasterize(scene), rasterize(after)


def show(img):
    ramp = " .:-=+*#%@"
    for row in img[::-1]:          # row 0 is y = 0; print with y up
        print("".join(ramp[min(9, int(v * 10))] for v in row))


print("before")
show(before_img)
print("after")
show(after_img)
print("mass before %.2f, after %.2f" % (before_img.sum(), after_img.sum()))
print("mean displacement along the push: %.3f"
      % np.mean((after.centroids - scene.centroids) @ push.direction))
