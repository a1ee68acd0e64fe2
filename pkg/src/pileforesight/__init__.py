"""Linear visual-foresight models for pushing piles of small objects.

Modules
-------
imaging    image vectors, Frobenius distance, PGM files
geometry   push actions, canonical-frame warps
sim        quasi-static 2-d pushing simulator
lsq        constrained least-squares fits of transition matrices
foresight  switched-linear and transport predictors, model files
control    Lyapunov function, greedy controller, closed-loop rollouts
harness    command-line pipeline
"""
from .control import (ActionGrid, DistanceField, TargetSet, build_distance_field, greedy_action,
                      lyapunov_image, rollout)
from .foresight import (DEFAULT_LENGTHS, SwitchedLinearModel, TransportModel, load_model,
                        predict_linear, save_model, train_switched_linear)
from .geometry import Action, canonical_transform, warp_image
from .imaging import frobenius_distance, read_pgm, write_pgm
from .lsq import PairedDataset, SolverConfig, fit
from .sim import Scene, SimConfig, apply_push, rasterize, spawn_scene

__version__ = "0.1.0"

__all__ = [
    "Action", "ActionGrid", "DEFAULT_LENGTHS", "DistanceField", "PairedDataset", "Scene",
    "SimConfig", "SolverConfig", "SwitchedLinearModel", "TargetSet", "TransportModel",
    "apply_push", "build_distance_field", "canonical_transform", "fit", "frobenius_distance",
    "greedy_action", "load_model", "lyapunov_image", "predict_linear", "rasterize", "read_pgm",
    "rollout", "save_model", "spawn_scene", "train_switched_linear", "warp_image", "write_pgm",
]
