"""Push parameterization, swept rectangles and SE(2) image warps.

World frame and image frame coincide: ``x`` points right and ``y`` points
down, both in ``[0, 1]``. Pixel ``(i, j)`` of an ``N x N`` image has its
center at ``((j + 0.5) / N, (i + 0.5) / N)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .imaging import DimensionError

__all__ = [
    "MAX_PUSH_LENGTH",
    "PUSHER_WIDTH",
    "Action",
    "AffineMap",
    "push_rectangle",
    "points_in_rectangle",
    "rectangle_in_workspace",
    "canonical_transform",
    "canonical_action",
    "bilinear_taps",
    "apply_taps",
    "sampling_matrix",
    "warp_image",
    "warp_mask",
    "compose_prediction",
    "pixel_centers",
]

MAX_PUSH_LENGTH = 0.5
PUSHER_WIDTH = 0.25
_SNAP = 1e-9


@dataclass(frozen=True)
class Action:
    """A straight push: start point (center of the pusher edge), heading, length."""

    px: float
    py: float
    theta: float
    length: float

    def __post_init__(self):
        if not (0.0 < self.length <= MAX_PUSH_LENGTH):
            raise ValueError(f"push length {self.length} outside (0, {MAX_PUSH_LENGTH}]")
        if not (0.0 <= self.px <= 1.0 and 0.0 <= self.py <= 1.0):
            raise ValueError(f"push start ({self.px}, {self.py}) outside the workspace")
        if not (0.0 <= self.theta < 2 * math.pi):
            object.__setattr__(self, "theta", float(self.theta) % (2 * math.pi))

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    @property
    def start(self) -> np.ndarray:
        return np.array([self.px, self.py])


@dataclass(frozen=True)
class AffineMap:
    """Rigid planar transform ``p -> R p + t`` stored as a 2x3 matrix."""

    matrix: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(2), np.zeros((2, 1))]))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise DimensionError(f"affine map must be 2x3, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_rotation(cls, angle: float, translation=(0.0, 0.0)) -> "AffineMap":
        c, s = math.cos(angle), math.sin(angle)
        return cls(np.array([[c, -s, translation[0]], [s, c, translation[1]]]))

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 2]

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "AffineMap":
        r_inv = self.rotation.T
        return AffineMap(np.hstack([r_inv, (-r_inv @ self.translation)[:, None]]))

    def compose(self, other: "AffineMap") -> "AffineMap":
        """Return ``self o other`` (apply ``other`` first)."""
        r = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        return AffineMap(np.hstack([r, t[:, None]]))

    def __eq__(self, other):
        return isinstance(other, AffineMap) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


def push_rectangle(a: Action, width: float = PUSHER_WIDTH) -> np.ndarray:
    """Corners (4, 2) of the area swept by the pusher, counter-clockwise.

    The near edge is centered on the push start and perpendicular to the
    heading; the rectangle extends ``a.length`` along the heading.
    """
    if width <= 0:
        raise ValueError("pusher width must be positive")
    p, d, n = a.start, a.direction, a.normal
    h = 0.5 * width
    return np.array([p - h * n, p - h * n + a.length * d, p + h * n + a.length * d, p + h * n])


def points_in_rectangle(points, a: Action, width: float = PUSHER_WIDTH) -> np.ndarray:
    """Boolean mask of points inside ``push_rectangle(a, width)`` (boundary inclusive)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2) - a.start
    u = pts @ a.direction
    v = pts @ a.normal
    return (u >= 0.0) & (u <= a.length) & (np.abs(v) <= 0.5 * width)


def rectangle_in_workspace(a: Action, width: float = PUSHER_WIDTH) -> bool:
    corners = push_rectangle(a, width)
    return bool(np.all(corners >= -1e-12) and np.all(corners <= 1.0 + 1e-12))


def canonical_transform(a: Action) -> AffineMap:
    """Map sending the push start to the image center and the heading to +x."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    r = np.array([[c, s], [-s, c]])
    t = np.array([0.5, 0.5]) - r @ a.start
    return AffineMap(np.hstack([r, t[:, None]]))


def canonical_action(a: Action) -> Action:
    return Action(0.5, 0.5, 0.0, a.length)


def pixel_centers(n: int) -> np.ndarray:
    """Pixel centers as an (n*n, 2) array of (x, y) in row-major order."""
    c = (np.arange(n) + 0.5) / n
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _snap(x: np.ndarray) -> np.ndarray:
    r = np.rint(x)
    return np.where(np.abs(x - r) < _SNAP, r, x)


@lru_cache(maxsize=2048)
def _taps_cached(key: bytes, n: int):
    m = np.frombuffer(key, dtype=np.float64).reshape(2, 3)
    src = AffineMap(m).inverse().apply(pixel_centers(n))
    fx = _snap(src[:, 0] * n - 0.5)
    fy = _snap(src[:, 1] * n - 0.5)
    j0 = np.floor(fx).astype(np.int64)
    i0 = np.floor(fy).astype(np.int64)
    ax = fx - j0
    ay = fy - i0
    idx = np.zeros((n * n, 4), dtype=np.int64)
    wts = np.zeros((n * n, 4))
    for k, (di, dj, w) in enumerate(((0, 0, (1 - ay) * (1 - ax)), (0, 1, (1 - ay) * ax),
                                     (1, 0, ay * (1 - ax)), (1, 1, ay * ax))):
        ii, jj = i0 + di, j0 + dj
        ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
        idx[:, k] = np.where(ok, ii * n + jj, 0)
        wts[:, k] = np.where(ok, w, 0.0)
    idx.setflags(write=False)
    wts.setflags(write=False)
    return idx, wts


def bilinear_taps(T: AffineMap, n: int):
    """Gather form of a warp: ``out[r] = sum_k w[r, k] * img.ravel()[idx[r, k]]``.

    Each output pixel center ``c`` bilinearly samples the input at ``T^-1(c)``;
    neighbours outside the grid get zero weight.
    """
    return _taps_cached(T.matrix.tobytes(), int(n))


def sampling_matrix(T: AffineMap, n: int) -> sp.csr_matrix:
    """Sparse ``(n*n, n*n)`` operator with ``vec(warp_image(img, T)) = W @ vec(img)``."""
    idx, wts = bilinear_taps(T, n)
    rows = np.repeat(np.arange(n * n), 4)
    mat = sp.csr_matrix((wts.ravel(), (rows, idx.ravel())), shape=(n * n, n * n))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def apply_taps(taps, flat: np.ndarray) -> np.ndarray:
    """Apply gather taps to a ``(..., n*n)`` stack of vectorized images."""
    idx, wts = taps
    return np.einsum("...rk,rk->...r", flat[..., idx], wts)


def warp_image(img, T: AffineMap) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    n = arr.shape[0]
    out = apply_taps(bilinear_taps(T, n), arr.reshape(-1))
    return np.clip(out, 0.0, 1.0).reshape(n, n)


def warp_mask(T: AffineMap, n: int) -> np.ndarray:
    """Validity mask ``T^-1(T(1))`` used to blend predictions into the original frame."""
    fwd = apply_taps(bilinear_taps(T, n), np.ones(n * n))
    m = apply_taps(bilinear_taps(T.inverse(), n), fwd)
    return np.clip(m, 0.0, 1.0).reshape(n, n)


def compose_prediction(original, warped_back_pred, mask) -> np.ndarray:
    original = np.asarray(original, dtype=np.float64)
    pred = np.asarray(warped_back_pred, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if original.shape != pred.shape or original.shape != mask.shape:
        raise DimensionError("resolution mismatch in compose_prediction")
    return np.clip(mask * pred + (1.0 - mask) * original, 0.0, 1.0)
