"""Image-space Lyapunov function and the greedy push controller.

``V(I) = sum(D * I) / sum(I)`` is the intensity-weighted mean distance of
occupied pixels to the target set. The controller evaluates every action of
a fixed grid with a prediction model and executes the one whose predicted
image has the smallest ``V``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .foresight import (ParticleSet, SwitchedLinearModel, TransportModel, particles_from_image,
                        predict_linear_batch, rasterize_particles, transport_predict)
from .geometry import (PUSHER_WIDTH, Action, pixel_centers, points_in_rectangle,
                       rectangle_in_workspace)
from .imaging import DimensionError, frobenius_distance, read_pgm
from .sim import Scene, SimConfig, apply_push, rasterize, touches_scene

__all__ = [
    "EmptySceneError",
    "TargetSet",
    "DistanceField",
    "ActionGrid",
    "RolloutStep",
    "RolloutLog",
    "build_distance_field",
    "lyapunov_image",
    "lyapunov_particles",
    "enumerate_actions",
    "greedy_action",
    "rollout",
    "covers_mass",
    "balance_mass",
    "Predictor",
    "IdentityPredictor",
    "LinearPredictor",
    "TransportPredictor",
    "OraclePredictor",
]


class EmptySceneError(ValueError):
    """The image carries (almost) no mass, so ``V`` is undefined."""


@dataclass(frozen=True)
class TargetSet:
    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"target mask must be square, got {m.shape}")
        if not m.any():
            raise ValueError("target set is empty")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @classmethod
    def from_pgm(cls, path: str | os.PathLike) -> "TargetSet":
        """Nonzero pixels are target pixels."""
        return cls(read_pgm(path) > 0)

    @classmethod
    def square(cls, n: int = 32, center=(0.5, 0.5), side: float = 0.4) -> "TargetSet":
        c = pixel_centers(n)
        h = 0.5 * side
        inside = (np.abs(c[:, 0] - center[0]) <= h) & (np.abs(c[:, 1] - center[1]) <= h)
        return cls(inside.reshape(n, n))

    @classmethod
    def l_shape(cls, n: int = 32, corner=(0.25, 0.25), arm: float = 0.5,
                thickness: float = 0.2) -> "TargetSet":
        c = pixel_centers(n)
        x, y = c[:, 0] - corner[0], c[:, 1] - corner[1]
        vert = (x >= 0) & (x <= thickness) & (y >= 0) & (y <= arm)
        horiz = (y >= arm - thickness) & (y <= arm) & (x >= 0) & (x <= arm)
        return cls((vert | horiz).reshape(n, n))


@dataclass(frozen=True)
class DistanceField:
    D: np.ndarray
    p: float = 2.0

    @property
    def d(self) -> np.ndarray:
        return self.D.reshape(-1)

    @property
    def n(self) -> int:
        return self.D.shape[0]


def _pnorm(diff, p):
    if math.isinf(p):
        return np.max(np.abs(diff), axis=-1)
    return np.sum(np.abs(diff) ** p, axis=-1) ** (1.0 / p)


def build_distance_field(t: TargetSet, p: float = 2.0) -> DistanceField:
    """Exact distance from every pixel center to the nearest target pixel center."""
    if p < 1:
        raise ValueError("p must be at least 1")
    centers = pixel_centers(t.n)
    targets = centers[t.mask.reshape(-1)]
    D = np.empty(len(centers))
    for start in range(0, len(centers), 128):
        chunk = centers[start:start + 128]
        D[start:start + 128] = _pnorm(chunk[:, None, :] - targets[None, :, :], p).min(axis=1)
    D[t.mask.reshape(-1)] = 0.0
    D = D.reshape(t.n, t.n)
    D.setflags(write=False)
    return DistanceField(D, p)


def lyapunov_image(f: DistanceField, img, mass_epsilon: float = 1e-6) -> float:
    img = np.asarray(img, dtype=np.float64)
    if img.shape != f.D.shape:
        raise DimensionError(f"image {img.shape} vs distance field {f.D.shape}")
    mass = float(img.sum())
    if mass < mass_epsilon:
        raise EmptySceneError("image has no mass; Lyapunov value undefined")
    return float(np.dot(f.d, img.reshape(-1)) / mass)


def _lyapunov_stack(f: DistanceField, imgs: np.ndarray, mass_epsilon: float = 1e-6) -> np.ndarray:
    flat = imgs.reshape(len(imgs), -1)
    mass = flat.sum(axis=1)
    if np.any(mass < mass_epsilon):
        raise EmptySceneError("a predicted image has no mass")
    return flat @ f.d / mass


@dataclass
class _TargetTree:
    tree: cKDTree
    p: float


def _target_tree(t: TargetSet, p: float) -> _TargetTree:
    return _TargetTree(cKDTree(pixel_centers(t.n)[t.mask.reshape(-1)]), p)


def lyapunov_particles(t: TargetSet, parts: ParticleSet, p: float = 2.0,
                       _tree: _TargetTree | None = None) -> float:
    """Mean distance from each particle to the nearest target pixel center."""
    if len(parts) == 0:
        raise EmptySceneError("particle set is empty")
    tree = _tree or _target_tree(t, p)
    dist, _ = tree.tree.query(parts.points, k=1, p=p)
    return float(np.mean(dist))


@dataclass(frozen=True)
class ActionGrid:
    """Push starts on a ``positions x positions`` lattice of cell centers."""

    positions: int = 8
    n_angles: int = 8
    lengths: tuple = (0.06, 0.12, 0.18, 0.24, 0.30)
    filter_outside: bool = True
    pusher_width: float = PUSHER_WIDTH

    def __post_init__(self):
        if self.positions < 1 or self.n_angles < 1 or not self.lengths:
            raise ValueError("action grid must have at least one position, angle and length")


def enumerate_actions(grid: ActionGrid) -> list[Action]:
    """Grid actions ordered by start position (row-major), then angle, then length."""
    coords = (np.arange(grid.positions) + 0.5) / grid.positions
    angles = 2 * math.pi * np.arange(grid.n_angles) / grid.n_angles
    out = []
    for py in coords:
        for px in coords:
            for th in angles:
                for ln in grid.lengths:
                    a = Action(float(px), float(py), float(th), float(ln))
                    if grid.filter_outside and not rectangle_in_workspace(a, grid.pusher_width):
                        continue
                    out.append(a)
    if not out:
        raise ValueError("every grid action leaves the workspace")
    return out


class Predictor(Protocol):
    """Anything that can predict next images for a batch of actions.

    Optional hooks: ``observe(scene, step)`` is called by ``rollout`` before
    each decision; ``scores(img, actions, field)`` replaces the default
    image-Lyapunov scoring of ``predict_many``.
    """

    def predict_many(self, img, actions: Sequence[Action]) -> np.ndarray: ...


class IdentityPredictor:
    """Predicts that nothing moves."""

    def predict_many(self, img, actions):
        img = np.asarray(img, dtype=np.float64)
        return np.broadcast_to(img, (len(actions),) + img.shape)


def covers_mass(img, actions: Sequence[Action], width: float = PUSHER_WIDTH) -> np.ndarray:
    """Whether each push rectangle contains at least one occupied pixel center."""
    img = np.asarray(img, dtype=np.float64)
    centers = pixel_centers(img.shape[0])[img.reshape(-1) > 0]
    out = np.zeros(len(actions), dtype=bool)
    if len(centers):
        for i, a in enumerate(actions):
            out[i] = bool(points_in_rectangle(centers, a, width).any())
    return out


def balance_mass(img, preds) -> np.ndarray:
    """Shrink the larger of the gained and lost mass so each prediction conserves mass.

    ``preds`` is a ``(k, N, N)`` stack of predictions of ``img``.
    """
    img = np.asarray(img, dtype=np.float64)
    delta = np.asarray(preds, dtype=np.float64) - img
    gain = np.clip(delta, 0.0, None)
    loss = np.clip(-delta, 0.0, None)
    g = gain.sum(axis=(1, 2))
    l = loss.sum(axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        g_scale = np.where(g > l, l / g, 1.0)
        l_scale = np.where(l > g, g / l, 1.0)
    g_scale = np.nan_to_num(g_scale, nan=1.0)[:, None, None]
    l_scale = np.nan_to_num(l_scale, nan=1.0)[:, None, None]
    return np.clip(img + g_scale * gain - l_scale * loss, 0.0, 1.0)


class LinearPredictor:
    """Switched-linear model wrapped for closed-loop use.

    Pushes whose rectangle covers no occupied pixel are predicted as no-ops
    (the model is trained only on pushes that touch mass), and with
    ``conserve_mass`` each predicted change is rebalanced so that mass is
    neither created nor destroyed.
    """

    def __init__(self, model: SwitchedLinearModel, skip_empty: bool = True,
                 conserve_mass: bool = True):
        self.model = model
        self.skip_empty = skip_empty
        self.conserve_mass = conserve_mass

    def predict_many(self, img, actions):
        img = np.asarray(img, dtype=np.float64)
        if self.skip_empty:
            out = np.empty((len(actions),) + img.shape)
            out[:] = img
            hit = np.flatnonzero(covers_mass(img, actions, self.model.pusher_width))
            if hit.size:
                out[hit] = predict_linear_batch(self.model, img, [actions[i] for i in hit])
        else:
            out = predict_linear_batch(self.model, img, actions)
        if self.conserve_mass:
            out = balance_mass(img, out)
        return out


class TransportPredictor:
    """Transport baseline; actions are ranked by the particle Lyapunov value."""

    def __init__(self, tm: TransportModel, n: int = 32):
        self.tm = tm
        self.n = n
        self.step = 0
        self._trees = {}

    def observe(self, scene, step):
        self.step = step

    def _seed(self, a_index):
        return np.random.SeedSequence([self.tm.rng_seed_base, self.step, a_index])

    def predict_many(self, img, actions):
        parts = particles_from_image(img, self.tm.threshold)
        return np.stack([rasterize_particles(transport_predict(self.tm, parts, a, self._seed(i)),
                                             self.n) for i, a in enumerate(actions)])

    def scores(self, img, actions, f: DistanceField, target: TargetSet | None = None):
        if target is None:
            target = TargetSet(f.D == 0)
        key = (target.mask.tobytes(), f.p)
        if key not in self._trees:
            self._trees[key] = _target_tree(target, f.p)
        tree = self._trees[key]
        parts = particles_from_image(img, self.tm.threshold)
        if len(parts) == 0:
            raise EmptySceneError("no particles above threshold")
        base = tree.tree.query(parts.points, k=1, p=f.p)[0]
        out = np.empty(len(actions))
        for i, a in enumerate(actions):
            moved = transport_predict(self.tm, parts, a, self._seed(i))
            if moved is parts:
                out[i] = base.mean()
                continue
            changed = np.any(moved.points != parts.points, axis=1)
            dist = base.copy()
            dist[changed] = tree.tree.query(moved.points[changed], k=1, p=f.p)[0]
            out[i] = dist.mean()
        return out


class OraclePredictor:
    """Uses the simulator itself as the model (needs the true scene)."""

    def __init__(self, cfg: SimConfig = SimConfig(), n: int = 32):
        self.cfg = cfg
        self.n = n
        self.scene = None

    def observe(self, scene: Scene, step: int = 0):
        self.scene = scene

    def predict_many(self, img, actions):
        if self.scene is None:
            raise RuntimeError("oracle predictor needs observe(scene) first")
        img = np.asarray(img, dtype=np.float64)
        out = np.empty((len(actions),) + img.shape)
        for i, a in enumerate(actions):
            if touches_scene(self.scene, a, self.cfg.pusher_width):
                out[i] = rasterize(apply_push(self.scene, a, self.cfg), self.n, self.cfg.supersample)
            else:
                out[i] = img
        return out


def _score(predictor, img, actions, f):
    if hasattr(predictor, "scores"):
        return np.asarray(predictor.scores(img, actions, f), dtype=np.float64)
    return _lyapunov_stack(f, np.asarray(predictor.predict_many(img, actions)))


def greedy_action(predictor, img, f: DistanceField, grid) -> tuple[Action, float]:
    """Action minimizing the predicted Lyapunov value; ties go to the earliest action.

    ``predictor`` is a ``Predictor`` object or a plain ``f(img, action) -> img``
    callable; ``grid`` is an ``ActionGrid`` or an explicit action list.
    """
    actions = enumerate_actions(grid) if isinstance(grid, ActionGrid) else list(grid)
    if callable(predictor) and not hasattr(predictor, "predict_many"):
        fn = predictor
        values = np.array([lyapunov_image(f, fn(img, a)) for a in actions])
    else:
        values = _score(predictor, img, actions, f)
    best = int(np.argmin(values))
    return actions[best], float(values[best])


@dataclass(frozen=True)
class RolloutStep:
    step: int
    action: Action
    v_pred: float
    v_real: float


@dataclass
class RolloutLog:
    steps: list = field(default_factory=list)
    status: str = "running"
    v_initial: float = float("nan")
    final_scene: Scene | None = None
    frames: list = field(default_factory=list)

    @property
    def v_final(self) -> float:
        return self.steps[-1].v_real if self.steps else self.v_initial

    def __len__(self):
        return len(self.steps)


def rollout(scene: Scene, predictor, f: DistanceField, grid, max_steps: int = 40,
            v_stop: float = 0.02, sim_cfg: SimConfig = SimConfig(), keep_frames: bool = False,
            stall_steps: int = 3) -> RolloutLog:
    """Closed loop: observe, stop if ``V <= v_stop``, else push greedily on the simulator.

    Status is ``converged``, ``max_steps`` or ``stalled`` (image unchanged for
    ``stall_steps`` consecutive pushes).
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    actions = enumerate_actions(grid) if isinstance(grid, ActionGrid) else list(grid)
    n = f.n
    img = rasterize(scene, n, sim_cfg.supersample)
    log = RolloutLog(v_initial=lyapunov_image(f, img))
    if keep_frames:
        log.frames.append(img)
    v = log.v_initial
    still = 0
    step = 0
    while True:
        if v <= v_stop:
            log.status = "converged"
            break
        if step >= max_steps:
            log.status = "max_steps"
            break
        if hasattr(predictor, "observe"):
            predictor.observe(scene, step)
        a, v_pred = greedy_action(predictor, img, f, actions)
        scene = apply_push(scene, a, sim_cfg)
        nxt = rasterize(scene, n, sim_cfg.supersample)
        v = lyapunov_image(f, nxt)
        log.steps.append(RolloutStep(step, a, v_pred, v))
        if keep_frames:
            log.frames.append(nxt)
        still = still + 1 if frobenius_distance(nxt, img) < 1e-6 else 0
        img = nxt
        step += 1
        if still >= stall_steps and v > v_stop:
            log.status = "stalled"
            break
    log.final_scene = scene
    return log
