"""Dense float64 tensors and the small op set the rest of the library builds on.

Tensors are immutable, row-major, and always 64-bit. Convolution is
cross-correlation (no kernel flip) with zero "same" padding, channels last.
"""

from __future__ import annotations

import struct
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "Tensor",
    "Activation",
    "ShapeError",
    "matmul",
    "conv2d_same",
    "ew",
    "apply",
    "write_atns",
    "read_atns",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Activation(Enum):
    LINEAR = "linear"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


class Tensor:
    """Immutable dense array of float64 values.

    ``shape`` is a tuple of positive extents and ``data`` the flat row-major
    contents; ``prod(shape) == len(data)`` always holds.
    """

    __slots__ = ("_a",)

    def __init__(self, values) -> None:
        a = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
        if a.ndim == 0:
            a = a.reshape(1)
        a.setflags(write=False)
        self._a = a

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def full(cls, shape, value: float) -> "Tensor":
        return cls(np.full(shape, value, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def rank(self) -> int:
        return self._a.ndim

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the contents (read-only)."""
        return self._a.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view."""
        return self._a

    def item(self) -> float:
        return float(self._a.reshape(-1)[0])

    def __len__(self) -> int:
        return self._a.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _as_array(x) -> np.ndarray:
    return x.array if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    av, bv = _as_array(a), _as_array(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {av.shape} x {bv.shape}")
    return Tensor(av @ bv)


def _check_conv_operands(x: np.ndarray, k: np.ndarray, x_rank: int) -> None:
    if x.ndim != x_rank or k.ndim != 4:
        raise ShapeError(f"conv2d_same needs input rank {x_rank} and kernel rank 4, "
                         f"got {x.shape} and {k.shape}")
    k1, k2, c_in, _ = k.shape
    if k1 % 2 == 0 or k2 % 2 == 0:
        raise ShapeError(f"conv2d_same supports odd kernel sizes only, got {k1}x{k2}")
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv2d_same channel mismatch: input has {x.shape[-1]}, "
                         f"kernel expects {c_in}")


def _im2col(x: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """[N,H,W,C] -> [N,H,W,k1*k2*C] patch matrix under zero same-padding."""
    p1, p2 = (k1 - 1) // 2, (k2 - 1) // 2
    xp = np.pad(x, ((0, 0), (p1, p1), (p2, p2), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k1, k2), axis=(1, 2))
    # win: [N,H,W,C,k1,k2] -> [N,H,W,k1,k2,C]
    win = win.transpose(0, 1, 2, 4, 5, 3)
    n, h, w = x.shape[0], x.shape[1], x.shape[2]
    return np.ascontiguousarray(win).reshape(n, h, w, k1 * k2 * x.shape[3])


def conv2d_same_batch(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cross-correlation of [N,H,W,C_in] with [k1,k2,C_in,C_out], same padding."""
    _check_conv_operands(x, k, 4)
    k1, k2, c_in, c_out = k.shape
    cols = _im2col(x, k1, k2)
    out = cols @ k.reshape(k1 * k2 * c_in, c_out)
    return out


def conv2d_same(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-padded 2D cross-correlation, channels last.

    Input [H,W,C_in] and kernel [k1,k2,C_in,C_out] (odd k1, k2) give
    [H,W,C_out]; spatial extents are preserved by zero padding.
    """
    xv, kv = _as_array(x), _as_array(kernel)
    _check_conv_operands(xv, kv, 3)
    return Tensor(conv2d_same_batch(xv[None], kv)[0])


def _broadcast_rhs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape == b.shape:
        return b
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return b  # trailing-axis vector, numpy broadcasts it
    raise ShapeError(f"operands not broadcastable: {a.shape} vs {b.shape} "
                     "(equal shapes or trailing-axis vector only)")


def ew(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add/sub/mul; ``b`` may be a trailing-axis bias vector."""
    av, bv = _as_array(a), _as_array(b)
    bv = _broadcast_rhs(av, bv)
    if op == "add":
        return Tensor(av + bv)
    if op == "sub":
        return Tensor(av - bv)
    if op == "mul":
        return Tensor(av * bv)
    raise ValueError(f"unknown elementwise op {op!r}")


def apply_array(act: Activation, x: np.ndarray) -> np.ndarray:
    if act is Activation.LINEAR:
        return x.copy()
    if act is Activation.RELU:
        return np.maximum(x, 0.0)
    if act is Activation.SIGMOID:
        return 1.0 / (1.0 + np.exp(-x))
    if act is Activation.TANH:
        return np.tanh(x)
    raise ValueError(f"unknown activation {act!r}")


def apply(act: Activation, a: Tensor) -> Tensor:
    """Apply an activation elementwise."""
    return Tensor(apply_array(act, _as_array(a)))


_ATNS_MAGIC = b"ATNS"
_ATNS_VERSION = 1


def write_atns(path, tensor: Tensor) -> None:
    """Write a tensor in the ATNS binary format.

    Layout: magic "ATNS", u32 version=1, u32 rank, rank x u64 extents,
    then the row-major payload as little-endian f64.
    """
    a = tensor.array if isinstance(tensor, Tensor) else np.asarray(tensor, np.float64)
    with open(path, "wb") as fh:
        fh.write(_ATNS_MAGIC)
        fh.write(struct.pack("<II", _ATNS_VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_atns(path) -> Tensor:
    """Read a tensor written by :func:`write_atns`."""
    raw = Path(path).read_bytes()
    if raw[:4] != _ATNS_MAGIC:
        raise ValueError(f"{path}: not an ATNS file (bad magic {raw[:4]!r})")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != _ATNS_VERSION:
        raise ValueError(f"{path}: unsupported ATNS version {version}")
    extents = struct.unpack_from(f"<{rank}Q", raw, 12)
    offset = 12 + 8 * rank
    n = int(np.prod(extents)) if rank else 1
    payload = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
    return Tensor(payload.reshape(extents))
