"""Dense rank-4 tensors, a deterministic counter-based RNG, and tensor file I/O.

Everything downstream (convolutions, up-sampling layers, training) runs on
the :class:`Tensor` type defined here: an immutable float64 array in
batch-channel-height-width order, row-major with width fastest.
"""
from __future__ import annotations

import math
import struct
from typing import Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Rng",
    "tensor_new",
    "elementwise_add",
    "concat_channels",
    "rng_normal",
    "save_tensor",
    "load_tensor",
]

Dims4 = tuple[int, int, int, int]


class Tensor:
    """Immutable dense rank-4 array with shape (n, c, h, w), float64.

    Instances never expose writable storage, so they are safe to share
    across threads; every operation returns a new tensor.
    """

    __slots__ = ("_data",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim != 4:
            raise ValueError(f"tensor must be rank 4, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"all tensor dims must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying float64 array."""
        return self._data

    @property
    def shape(self) -> Dims4:
        return self._data.shape

    @property
    def n(self) -> int:
        return self._data.shape[0]

    @property
    def c(self) -> int:
        return self._data.shape[1]

    @property
    def h(self) -> int:
        return self._data.shape[2]

    @property
    def w(self) -> int:
        return self._data.shape[3]

    @property
    def size(self) -> int:
        return self._data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def tensor_new(shape: Dims4, fill: float = 0.0) -> Tensor:
    """Create a tensor of the given shape with every element equal to ``fill``."""
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ValueError(f"expected 4 dims, got {len(shape)}")
    if min(shape) < 1:
        raise ValueError(f"all tensor dims must be >= 1, got {shape}")
    return Tensor(np.full(shape, float(fill)))


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    """Element-by-element sum of two same-shaped tensors."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Juxtapose feature maps along the channel axis, in argument order."""
    if len(parts) == 0:
        raise ValueError("concat_channels requires at least one tensor")
    first = parts[0]
    for p in parts[1:]:
        if (p.n, p.h, p.w) != (first.n, first.h, first.w):
            raise ValueError(
                f"spatial/batch mismatch: {p.shape} vs {first.shape}"
            )
    return Tensor(np.concatenate([p.data for p in parts], axis=1))


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = float(2.0**-53)


class Rng:
    """Deterministic counter-based random stream (splitmix64 update rule).

    Output ``i`` of a stream with seed ``s`` is ``mix64(s + (i+1) * GOLDEN)``
    where ``mix64`` is the splitmix64 finalizer
    (``z ^= z>>30; z *= 0xBF58476D1CE4E5B9; z ^= z>>27; z *= 0x94D049BB133111EB;
    z ^= z>>31`` over 64-bit words).  The integer stream is therefore a pure
    function of the seed and bit-identical across platforms.  ``split``
    consumes one counter slot to derive an independent child stream.
    """

    __slots__ = ("_seed", "_counter")

    def __init__(self, seed: int):
        self._seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def next_block(self, count: int) -> np.ndarray:
        """Next ``count`` raw 64-bit words as a uint64 array."""
        start = self._counter + 1
        self._counter += count
        idx = np.arange(start, start + count, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = (np.uint64(self._seed) + idx * np.uint64(_GOLDEN)) & _MASK64
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        return z

    def next_u64(self) -> int:
        return int(self.next_block(1)[0])

    def uniform(self, count: int) -> np.ndarray:
        """``count`` doubles uniform on [0, 1), from the top 53 bits."""
        return (self.next_block(count) >> np.uint64(11)).astype(np.float64) * _INV53

    def split(self) -> "Rng":
        """Derive an independent child stream; advances this stream by one."""
        return Rng(self.next_u64())


def rng_normal(rng: Rng, shape: Dims4, stddev: float) -> Tensor:
    """Tensor of i.i.d. normal(0, stddev**2) draws, deterministic per stream.

    Uses the Box-Muller transform on consecutive pairs of uniforms; the first
    uniform is shifted into (0, 1] so the log is always finite.
    """
    if stddev <= 0:
        raise ValueError(f"stddev must be > 0, got {stddev}")
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4 or min(shape) < 1:
        raise ValueError(f"invalid shape {shape}")
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u1 = ((rng.next_block(pairs) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53
    u2 = rng.uniform(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return Tensor((stddev * z[:count]).reshape(shape))


# ---------------------------------------------------------------------------
# Binary tensor file format
# ---------------------------------------------------------------------------
#
# magic "PDCT", u32 version=1, four u32 little-endian dims (n, c, h, w),
# then n*c*h*w little-endian f64 values.  Round-trips bit-exactly.

_MAGIC = b"PDCT"
_VERSION = 1
_HEADER = struct.Struct("<4sI4I")


def save_tensor(t: Tensor, path) -> None:
    """Write a tensor to ``path`` in the binary tensor format."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, *t.shape))
        fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_tensor(path) -> Tensor:
    """Read a tensor written by :func:`save_tensor`; bit-exact inverse."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"truncated tensor file: {path}")
        magic, version, n, c, h, w = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        if version != _VERSION:
            raise ValueError(f"unsupported tensor format version {version}")
        if min(n, c, h, w) < 1:
            raise ValueError(f"invalid dims {(n, c, h, w)} in {path}")
        payload = fh.read(8 * n * c * h * w + 1)
    if len(payload) != 8 * n * c * h * w:
        raise ValueError(f"tensor file payload has wrong length: {path}")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, c, h, w)
    return Tensor(values)
