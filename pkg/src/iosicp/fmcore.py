"""Dense feature grids and the small numeric kernels built on them.

A :class:`FeatureGrid` is a ``C x H x W`` float32 raster in the owning agent's
body frame.  Cell ``(h, w)`` has its center at
``(origin_x + w * cell_size, origin_y + h * cell_size)``, so columns advance
along +x and rows along +y.  Arithmetic is carried out in float64 and stored
back as float32.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ShapeError",
    "FeatureGrid",
    "elementwise_mul",
    "resize_matrix",
    "resize_to",
    "resize_adjoint",
    "spatial_pool",
    "stable_softmax",
    "channel_dot",
    "concat_channels",
]

_MAGIC = b"FGRD"
_HEADER = struct.Struct("<4sIIIfff")


class ShapeError(ValueError):
    """Raised when grid dimensions do not line up."""


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    data: np.ndarray
    cell_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"grid data must be a non-empty C x H x W array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid data contains non-finite values")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, channels, height, width, cell_size=1.0, origin=(0.0, 0.0)):
        return cls(np.zeros((channels, height, width), np.float32), cell_size, origin)

    @classmethod
    def centered(cls, data, cell_size=1.0):
        """Grid whose geometric center sits at the body-frame origin."""
        c, h, w = np.shape(data)
        origin = (-(w - 1) / 2.0 * cell_size, -(h - 1) / 2.0 * cell_size)
        return cls(data, cell_size, origin)

    def with_data(self, data) -> "FeatureGrid":
        return FeatureGrid(data, self.cell_size, self.origin)

    def f64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Body-frame x (per column) and y (per row) coordinates of cell centers."""
        xs = self.origin[0] + np.arange(self.width) * self.cell_size
        ys = self.origin[1] + np.arange(self.height) * self.cell_size
        return xs, ys

    def same_geometry(self, other: "FeatureGrid") -> bool:
        return (
            self.height == other.height
            and self.width == other.width
            and self.cell_size == other.cell_size
            and self.origin == other.origin
        )

    def __eq__(self, other):
        if not isinstance(other, FeatureGrid):
            return NotImplemented
        return (
            self.cell_size == other.cell_size
            and self.origin == other.origin
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def to_bytes(self) -> bytes:
        c, h, w = self.shape
        header = _HEADER.pack(_MAGIC, c, h, w, self.cell_size, self.origin[0], self.origin[1])
        return header + self.data.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf: bytes) -> "FeatureGrid":
        if len(buf) < _HEADER.size:
            raise ShapeError("buffer shorter than grid header")
        magic, c, h, w, cell, ox, oy = _HEADER.unpack_from(buf)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        n = c * h * w
        body = buf[_HEADER.size:]
        if len(body) != 4 * n:
            raise ShapeError(f"expected {4 * n} payload bytes, got {len(body)}")
        data = np.frombuffer(body, dtype="<f4").reshape(c, h, w)
        return cls(data, cell, (ox, oy))


Operand = Union[FeatureGrid, np.ndarray, float, int]


def elementwise_mul(a: FeatureGrid, b: Operand) -> FeatureGrid:
    """Multiply ``a`` by a scalar, an ``H x W`` mask, or a same-shape grid."""
    x = a.f64()
    if isinstance(b, FeatureGrid):
        if b.shape != a.shape:
            raise ShapeError(f"grid shapes differ: {a.shape} vs {b.shape}")
        out = x * b.f64()
    elif np.isscalar(b):
        out = x * float(b)
    else:
        m = np.asarray(b, dtype=np.float64)
        if m.shape == a.shape[1:]:
            out = x * m[None, :, :]
        elif m.shape == a.shape:
            out = x * m
        else:
            raise ShapeError(f"mask shape {m.shape} does not match grid {a.shape}")
    return a.with_data(out)


def resize_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Row-stochastic ``n_dst x n_src`` resampling operator along one axis.

    Shrinking averages the source cells covered by each target cell;
    growing copies the nearest source cell.
    """
    if n_src < 1 or n_dst < 1:
        raise ShapeError(f"resize dimensions must be >= 1, got {n_src} -> {n_dst}")
    r = np.zeros((n_dst, n_src))
    if n_dst <= n_src:
        for i in range(n_dst):
            lo = (i * n_src) // n_dst
            hi = -((-(i + 1) * n_src) // n_dst)
            r[i, lo:hi] = 1.0 / (hi - lo)
    else:
        for i in range(n_dst):
            r[i, (i * n_src) // n_dst] = 1.0
    return r


def _apply_resize(x: np.ndarray, rh: np.ndarray, rw: np.ndarray) -> np.ndarray:
    return rh @ x @ rw.T


def resize_to(g: FeatureGrid, height: int, width: int) -> FeatureGrid:
    if height < 1 or width < 1:
        raise ShapeError(f"target size must be >= 1, got {height} x {width}")
    if (height, width) == (g.height, g.width):
        return g
    rh = resize_matrix(g.height, height)
    rw = resize_matrix(g.width, width)
    out = _apply_resize(g.f64(), rh, rw)
    cell = g.cell_size * g.height / height
    # keep the lower-left corner of the covered extent fixed
    ox = g.origin[0] - 0.5 * g.cell_size + 0.5 * g.cell_size * g.width / width
    oy = g.origin[1] - 0.5 * g.cell_size + 0.5 * cell
    return FeatureGrid(out, cell, (ox, oy))


def resize_adjoint(grad: np.ndarray, src_hw: tuple[int, int]) -> np.ndarray:
    """Transpose of :func:`resize_to` applied to a ``C x h x w`` gradient."""
    _, h, w = grad.shape
    rh = resize_matrix(src_hw[0], h)
    rw = resize_matrix(src_hw[1], w)
    return rh.T @ grad @ rw


def spatial_pool(g: FeatureGrid, mode: str = "avg") -> np.ndarray:
    x = g.f64().reshape(g.channels, -1)
    if mode == "avg":
        return x.mean(axis=1)
    if mode == "max":
        return x.max(axis=1)
    raise ValueError(f"unknown pooling mode {mode!r}")


def stable_softmax(scores: Sequence[float] | np.ndarray, axis: int = 0) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("softmax of an empty sequence")
    if not np.all(np.isfinite(s)):
        raise ValueError("softmax scores must be finite")
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def channel_dot(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Per-location dot product over channels, scaled by ``1/sqrt(C)``."""
    return np.einsum("chw,...chw->...hw", q, k) / math.sqrt(q.shape[0])


def concat_channels(grids: Sequence[FeatureGrid]) -> FeatureGrid:
    if not grids:
        raise ShapeError("nothing to concatenate")
    first = grids[0]
    for g in grids[1:]:
        if not first.same_geometry(g):
            raise ShapeError("cannot concatenate grids with different geometry")
    return first.with_data(np.concatenate([g.data for g in grids], axis=0))
