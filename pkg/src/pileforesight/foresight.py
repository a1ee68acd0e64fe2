"""Image prediction models.

``SwitchedLinearModel`` holds one transition matrix per discrete push length
and predicts in the canonical pusher frame: warp the image so the push starts
at the center heading +x, multiply, clamp, and warp the predicted *change*
back onto the original image.

``TransportModel`` is the object-centric baseline: every above-threshold
pixel is a particle, and particles inside the push rectangle are resampled
uniformly from a band just ahead of it.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import (PUSHER_WIDTH, Action, AffineMap, apply_taps, bilinear_taps, canonical_transform,
                       pixel_centers, points_in_rectangle, warp_image)
from .imaging import DimensionError, devectorize, vectorize
from .lsq import MODES, PairedDataset, SolverConfig, TransitionMatrix, fit

__all__ = [
    "DEFAULT_LENGTHS",
    "SwitchedLinearModel",
    "TransportModel",
    "ParticleSet",
    "ModelFileError",
    "ModelFormatError",
    "ModelVersionError",
    "ModelTruncatedError",
    "train_switched_linear",
    "length_index",
    "predict_linear",
    "predict_linear_batch",
    "wall_map",
    "extract_kernel",
    "step_response",
    "particles_from_image",
    "transport_predict",
    "rasterize_particles",
    "transport_predict_image",
    "save_model",
    "load_model",
]

DEFAULT_LENGTHS = tuple(np.linspace(0.06, 0.30, 5).tolist())

_MAGIC = b"SLVF"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


@dataclass(frozen=True)
class SwitchedLinearModel:
    n: int
    lengths: tuple
    matrices: tuple
    mode: str = "nonneg"
    pusher_width: float = PUSHER_WIDTH

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        mats = []
        for m in self.matrices:
            a = np.array(m.A if isinstance(m, TransitionMatrix) else m, dtype=np.float64)
            if a.shape != (self.n * self.n, self.n * self.n):
                raise DimensionError(f"matrix shape {a.shape} does not match N={self.n}")
            a.setflags(write=False)
            mats.append(a)
        if not lengths or len(lengths) != len(mats):
            raise ValueError("need one matrix per push length, and at least one length")
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("push lengths must be strictly increasing")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def k(self) -> int:
        return len(self.lengths)

    def __eq__(self, other):
        return (isinstance(other, SwitchedLinearModel) and self.n == other.n
                and self.lengths == other.lengths and self.mode == other.mode
                and self.pusher_width == other.pusher_width
                and all(np.array_equal(a, b) for a, b in zip(self.matrices, other.matrices)))

    __hash__ = None


def train_switched_linear(datasets: Sequence[PairedDataset], lengths=DEFAULT_LENGTHS,
                          mode: str = "nonneg", cfg: SolverConfig = SolverConfig(),
                          pusher_width: float = PUSHER_WIDTH) -> SwitchedLinearModel:
    """Fit one transition matrix per push-length bucket."""
    if len(datasets) != len(lengths):
        raise ValueError("need exactly one dataset per push length")
    mats = []
    for k, data in enumerate(datasets):
        if data is None or data.n_pairs == 0:
            raise ValueError(f"push-length bucket {k} is empty")
        mats.append(fit(data, mode, cfg).A)
    n = int(round(np.sqrt(datasets[0].dim)))
    return SwitchedLinearModel(n, tuple(lengths), tuple(mats), mode, pusher_width)


def length_index(model: SwitchedLinearModel, length: float) -> int:
    """Nearest discretized length; ties go to the shorter push."""
    return int(np.argmin(np.abs(np.asarray(model.lengths) - length)))


@lru_cache(maxsize=1024)
def _wall_map_cached(key: bytes, n: int) -> np.ndarray:
    T = AffineMap(np.frombuffer(key, dtype=np.float64).reshape(2, 3))
    # a canonical pixel is on the board when its bilinear sample touches any board pixel
    on = (bilinear_taps(T, n)[1].sum(axis=1) > 0.0).reshape(n, n)
    if not on.any():
        out = np.arange(n * n)
    else:
        _, (ii, jj) = ndimage.distance_transform_edt(~on, return_indices=True)
        out = (ii * n + jj).reshape(-1)
    out.setflags(write=False)
    return out


def wall_map(T: AffineMap, n: int) -> np.ndarray:
    """For each canonical-frame pixel, the nearest pixel that samples the board.

    Pixels whose bilinear sample has support on the board map to themselves. Mass a model sends beyond the board
    edge is moved there, as the simulator clamps pieces against the walls.
    """
    return _wall_map_cached(T.matrix.tobytes(), int(n))


def _wall_clamp(pred: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Scatter-add each pixel of ``pred`` (shape ``(..., n*n)``) to its wall target."""
    flat = pred.reshape(-1, pred.shape[-1])
    tg = np.broadcast_to(targets.reshape(-1, pred.shape[-1]), flat.shape)
    offs = (np.arange(flat.shape[0]) * flat.shape[1])[:, None]
    out = np.bincount((tg + offs).ravel(), weights=flat.ravel(), minlength=flat.size)
    return out.reshape(pred.shape)


def predict_linear(model: SwitchedLinearModel, img, a: Action) -> np.ndarray:
    """Predict the image after push ``a``.

    In the canonical frame the model maps ``y = T(img)`` to ``clamp(A y)``; the
    change ``clamp(A y) - y`` is warped back with ``T^-1`` and added to the
    original image. Pixels whose kernels are identities therefore come back
    bit-exact, and regions outside the canonical frame are untouched.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (model.n, model.n):
        raise DimensionError(f"image shape {img.shape} does not match model N={model.n}")
    T = canonical_transform(a)
    y = vectorize(warp_image(img, T))
    y_next = np.clip(model.matrices[length_index(model, a.length)] @ y, 0.0, 1.0)
    y_next = np.clip(_wall_clamp(y_next, wall_map(T, model.n)), 0.0, 1.0)
    delta = apply_taps(bilinear_taps(T.inverse(), model.n), y_next - y)
    return np.clip(img + delta.reshape(img.shape), 0.0, 1.0)


def predict_linear_batch(model: SwitchedLinearModel, img, actions: Sequence[Action]) -> np.ndarray:
    """``predict_linear`` for many actions at once; returns ``(len(actions), N, N)``.

    Warps are shared between actions that differ only in length, and the
    matrix products are batched per length bucket.
    """
    img = np.asarray(img, dtype=np.float64)
    n = model.n
    if img.shape != (n, n):
        raise DimensionError(f"image shape {img.shape} does not match model N={n}")
    if not actions:
        return np.zeros((0, n, n))
    flat = img.reshape(-1)
    pose_of = {}
    poses = []
    which = np.empty(len(actions), dtype=np.int64)
    for a_i, a in enumerate(actions):
        key = (a.px, a.py, a.theta)
        if key not in pose_of:
            pose_of[key] = len(poses)
            poses.append(canonical_transform(a))
        which[a_i] = pose_of[key]
    f_idx = np.stack([bilinear_taps(T, n)[0] for T in poses])
    f_w = np.stack([bilinear_taps(T, n)[1] for T in poses])
    warped = np.clip(np.einsum("prk,prk->pr", flat[f_idx], f_w), 0.0, 1.0)

    kidx = np.array([length_index(model, a.length) for a in actions])
    change = np.empty((len(actions), n * n))
    for k in np.unique(kidx):
        sel = np.flatnonzero(kidx == k)
        change[sel] = np.clip((model.matrices[k] @ warped[which[sel]].T).T, 0.0, 1.0)
    walls = np.stack([wall_map(T, n) for T in poses])[which]
    change = np.clip(_wall_clamp(change, walls), 0.0, 1.0) - warped[which]

    inv = [bilinear_taps(T.inverse(), n) for T in poses]
    b_idx = np.stack([t[0] for t in inv])[which]
    b_w = np.stack([t[1] for t in inv])[which]
    back = np.einsum("ark,ark->ar", np.take_along_axis(
        change, b_idx.reshape(len(actions), -1), axis=1).reshape(b_idx.shape), b_w)
    return np.clip(flat + back, 0.0, 1.0).reshape(len(actions), n, n)


def extract_kernel(model: SwitchedLinearModel, length_index: int, i: int, j: int) -> np.ndarray:
    """Row ``i*N + j`` of a transition matrix as an ``N x N`` image (raw values)."""
    n = model.n
    if not (0 <= length_index < model.k and 0 <= i < n and 0 <= j < n):
        raise IndexError(f"kernel index ({length_index}, {i}, {j}) out of range")
    return model.matrices[length_index][i * n + j].reshape(n, n).copy()


def step_response(model: SwitchedLinearModel, length_index: int) -> np.ndarray:
    """Image ``A @ (0.5 * 1)`` for one push length (raw values, not clamped)."""
    if not 0 <= length_index < model.k:
        raise IndexError(f"length index {length_index} out of range")
    return devectorize(model.matrices[length_index] @ np.full(model.n * model.n, 0.5))


# -- object-centric transport baseline -------------------------------------------------


@dataclass(frozen=True)
class ParticleSet:
    """2-d points in the unit workspace, with optional per-point intensity."""

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ValueError("particles must lie inside the unit workspace")
        w = np.ones(len(pts)) if self.weights is None else np.array(self.weights, dtype=np.float64)
        if w.shape != (len(pts),):
            raise ValueError("need one weight per particle")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class TransportModel:
    pusher_width: float = PUSHER_WIDTH
    band_depth: float = None
    band_width: float = None
    rng_seed_base: int = 0
    threshold: float = 0.0

    def __post_init__(self):
        if self.band_depth is None:
            object.__setattr__(self, "band_depth", 0.5 * self.pusher_width)
        if self.band_width is None:
            object.__setattr__(self, "band_width", self.pusher_width)
        if min(self.pusher_width, self.band_depth, self.band_width) <= 0:
            raise ValueError("transport extents must be positive")

    def band(self, a: Action) -> np.ndarray:
        """Corners of the sampling band abutting the far edge of the push rectangle."""
        p, d, nrm = a.start, a.direction, a.normal
        h = 0.5 * self.band_width
        near = p + a.length * d
        far = near + self.band_depth * d
        return np.array([near - h * nrm, far - h * nrm, far + h * nrm, near + h * nrm])


def particles_from_image(img, threshold: float = 0.5) -> ParticleSet:
    """Pixel centers of pixels brighter than ``threshold``, weighted by intensity."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    img = np.asarray(img, dtype=np.float64)
    flat = img.reshape(-1)
    keep = flat > threshold
    return ParticleSet(pixel_centers(img.shape[0])[keep], flat[keep])


def transport_predict(tm: TransportModel, parts: ParticleSet, a: Action, seed: int) -> ParticleSet:
    """Teleport particles inside the push rectangle to uniform samples ahead of it."""
    inside = points_in_rectangle(parts.points, a, tm.pusher_width)
    count = int(inside.sum())
    if count == 0:
        return parts
    rng = np.random.default_rng(seed)
    u = a.length + rng.uniform(0.0, tm.band_depth, size=count)
    v = rng.uniform(-0.5 * tm.band_width, 0.5 * tm.band_width, size=count)
    new = a.start + u[:, None] * a.direction + v[:, None] * a.normal
    pts = np.array(parts.points)
    pts[inside] = np.clip(new, 0.0, 1.0)
    return ParticleSet(pts, parts.weights)


def rasterize_particles(parts: ParticleSet, n: int) -> np.ndarray:
    """Deposit particle weights into the pixels containing them, clamped to 1."""
    img = np.zeros(n * n)
    if len(parts):
        cols = np.minimum((parts.points[:, 0] * n).astype(np.int64), n - 1)
        rows = np.minimum((parts.points[:, 1] * n).astype(np.int64), n - 1)
        np.add.at(img, rows * n + cols, parts.weights)
    return np.clip(img, 0.0, 1.0).reshape(n, n)


def transport_predict_image(tm: TransportModel, img, a: Action, seed: int) -> np.ndarray:
    """Image-space bridge for the transport model, so it can be scored like the others."""
    img = np.asarray(img, dtype=np.float64)
    parts = particles_from_image(img, tm.threshold)
    return rasterize_particles(transport_predict(tm, parts, a, seed), img.shape[0])


# -- model files ---------------------------------------------------------------------


class ModelFileError(ValueError):
    """Base class for unreadable model files."""


class ModelFormatError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


class ModelTruncatedError(ModelFileError):
    pass


def save_model(model: SwitchedLinearModel, path: str | os.PathLike) -> None:
    """Write the little-endian ``SLVF`` model file."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, model.n, model.k, MODES.index(model.mode),
                              float(model.pusher_width)))
        fh.write(np.asarray(model.lengths, dtype="<f8").tobytes())
        for a in model.matrices:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path: str | os.PathLike) -> SwitchedLinearModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != _MAGIC:
        raise ModelFormatError(f"{path}: not an SLVF model file")
    if len(buf) < _HEADER.size:
        raise ModelTruncatedError(f"{path}: truncated header")
    _, version, n, k, mode, width = _HEADER.unpack_from(buf)
    if version != _VERSION:
        raise ModelVersionError(f"{path}: unsupported model version {version}")
    if mode >= len(MODES) or n < 2 or k < 1:
        raise ModelFormatError(f"{path}: bad header fields")
    need = _HEADER.size + 8 * k + 8 * k * n ** 4
    if len(buf) < need:
        raise ModelTruncatedError(f"{path}: expected {need} bytes, found {len(buf)}")
    off = _HEADER.size
    lengths = np.frombuffer(buf, dtype="<f8", count=k, offset=off)
    off += 8 * k
    mats = []
    for _ in range(k):
        mats.append(np.frombuffer(buf, dtype="<f8", count=n ** 4, offset=off)
                    .reshape(n * n, n * n).astype(np.float64))
        off += 8 * n ** 4
    return SwitchedLinearModel(int(n), tuple(lengths.tolist()), tuple(mats), MODES[mode], width)
