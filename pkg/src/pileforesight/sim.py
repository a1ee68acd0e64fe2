"""Deterministic quasi-static pushing of convex pieces on a unit board.

Pieces translate but never rotate. A push advances a flat pusher in small
substeps; pieces overlapping the swept area are projected out ahead of (or
beside) the pusher, then piece overlaps are relaxed by pairwise minimum
translation with the pusher and board walls held fixed.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _simcore
from .geometry import PUSHER_WIDTH, Action

__all__ = [
    "Piece",
    "Scene",
    "SimConfig",
    "spawn_scene",
    "apply_push",
    "rasterize",
    "touches_scene",
    "write_scene",
    "read_scene",
    "SceneFormatError",
]


class SceneFormatError(ValueError):
    pass


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class Piece:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("a piece needs at least three 2-d vertices")
        if _signed_area(v) <= 0:
            raise ValueError("piece vertices must be counter-clockwise with positive area")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = 0.5 * cross.sum()
        return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


@dataclass(frozen=True)
class SimConfig:
    piece_radius: float = 0.02
    verts_per_piece: int = 7
    substeps_per_unit_length: int = 100
    settle_iterations: int = 20
    overlap_tol: float = 1e-4
    supersample: int = 4
    rng_seed: int = 0
    pusher_width: float = PUSHER_WIDTH

    def __post_init__(self):
        for name in ("piece_radius", "substeps_per_unit_length", "settle_iterations",
                     "overlap_tol", "supersample", "pusher_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SimConfig.{name} must be positive")
        if self.verts_per_piece < 3:
            raise ValueError("SimConfig.verts_per_piece must be at least 3")


class Scene:
    """Immutable set of pieces stored as padded vertex arrays."""

    __slots__ = ("verts", "nv", "seed")

    def __init__(self, verts, nv, seed: int = 0):
        verts = np.array(verts, dtype=np.float64)
        if verts.size == 0:
            verts = np.zeros((0, 3, 2))
        nv = np.array(nv, dtype=np.int64).reshape(-1)
        if verts.shape[0] != nv.shape[0]:
            raise ValueError("vertex array and count array disagree on piece count")
        verts.setflags(write=False)
        nv.setflags(write=False)
        self.verts = verts
        self.nv = nv
        self.seed = int(seed)

    @classmethod
    def from_pieces(cls, pieces, seed: int = 0) -> "Scene":
        pieces = list(pieces)
        vmax = max((len(p.vertices) for p in pieces), default=3)
        verts = np.zeros((len(pieces), vmax, 2))
        nv = np.zeros(len(pieces), dtype=np.int64)
        for k, p in enumerate(pieces):
            m = len(p.vertices)
            verts[k, :m] = p.vertices
            nv[k] = m
        return cls(verts, nv, seed)

    @property
    def pieces(self) -> list[Piece]:
        return [Piece(self.verts[k, : self.nv[k]]) for k in range(len(self))]

    @property
    def centroids(self) -> np.ndarray:
        return np.array([p.centroid for p in self.pieces]).reshape(-1, 2)

    def __len__(self):
        return int(self.nv.shape[0])

    def __eq__(self, other):
        return (isinstance(other, Scene) and np.array_equal(self.verts, other.verts)
                and np.array_equal(self.nv, other.nv))

    def __repr__(self):
        return f"Scene(pieces={len(self)}, seed={self.seed})"


def spawn_scene(cfg: SimConfig, count: int, region=(0.0, 0.0, 1.0, 1.0), seed: int = 0) -> Scene:
    """Scatter ``count`` random convex pieces with centers uniform in ``region``.

    Each piece is the convex hull of ``cfg.verts_per_piece`` points drawn on a
    circle of radius ``cfg.piece_radius``. Initial overlaps are relaxed while
    centroids are kept inside ``region``.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    x0, y0, x1, y1 = (float(r) for r in region)
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise ValueError(f"region {region} is not inside the unit workspace")
    rng = np.random.default_rng(seed)
    m = cfg.verts_per_piece
    verts = np.zeros((count, m, 2))
    for k in range(count):
        cx = rng.uniform(x0, x1)
        cy = rng.uniform(y0, y1)
        # points on a circle are in convex position, so angular order is the hull
        ang = np.sort(rng.uniform(0.0, 2 * math.pi, size=m))
        verts[k, :, 0] = cx + cfg.piece_radius * np.cos(ang)
        verts[k, :, 1] = cy + cfg.piece_radius * np.sin(ang)
    nv = np.full(count, m, dtype=np.int64)
    if count:
        for _ in range(200 * cfg.settle_iterations):
            worst = _simcore.separate_pairs(verts, nv)
            _simcore.clamp_centroids(verts, nv, x0, y0, x1, y1)
            _simcore.clamp_to_box(verts, nv, 0.0, 0.0, 1.0, 1.0)
            if worst <= 0.0:
                break
    return Scene(verts, nv, seed)


def apply_push(scene: Scene, a: Action, cfg: SimConfig) -> Scene:
    if len(scene) == 0:
        return scene
    verts = np.array(scene.verts)
    nsub = max(1, math.ceil(a.length * cfg.substeps_per_unit_length))
    _simcore.push(verts, scene.nv, a.px, a.py, a.theta, a.length, 0.5 * cfg.pusher_width,
                  nsub, cfg.settle_iterations)
    return Scene(verts, scene.nv, scene.seed)


def touches_scene(scene: Scene, a: Action, width: float = PUSHER_WIDTH) -> bool:
    """Whether any piece overlaps the swept rectangle; if not, the push is a no-op."""
    if len(scene) == 0:
        return False
    return bool(_simcore.touches_swept(scene.verts, scene.nv, a.px, a.py, a.theta,
                                       a.length, 0.5 * width))


def rasterize(scene: Scene, n: int = 32, supersample: int = 4) -> np.ndarray:
    if n < 2:
        raise ValueError("resolution must be at least 2")
    if len(scene) == 0:
        return np.zeros((n, n))
    return _simcore.rasterize(scene.verts, scene.nv, int(n), int(supersample))


def write_scene(path: str | os.PathLike, scene: Scene) -> None:
    lines = [f"scene N={len(scene)} seed={scene.seed}"]
    for p in scene.pieces:
        lines.append("piece " + " ".join(repr(float(c)) for c in p.vertices.ravel()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scene(path: str | os.PathLike) -> Scene:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if not lines or lines[0][0] != "scene":
        raise SceneFormatError("missing 'scene' header")
    try:
        fields = dict(tok.split("=", 1) for tok in lines[0][1:])
        count, seed = int(fields["N"]), int(fields["seed"])
    except (KeyError, ValueError) as exc:
        raise SceneFormatError(f"bad scene header: {' '.join(lines[0])}") from exc
    pieces = []
    for tok in lines[1:]:
        if tok[0] != "piece" or (len(tok) - 1) % 2:
            raise SceneFormatError(f"bad piece line: {' '.join(tok)}")
        pieces.append(Piece(np.array([float(t) for t in tok[1:]]).reshape(-1, 2)))
    if len(pieces) != count:
        raise SceneFormatError(f"header says {count} pieces, found {len(pieces)}")
    return Scene.from_pieces(pieces, seed)
