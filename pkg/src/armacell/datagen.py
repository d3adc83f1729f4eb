"""Synthetic data: the eight generating processes and the moving-squares videos.

All error terms are Gaussian white noise. Defaults reproduce the standard
coefficient sets, e.g. the ARMA(2,1) process

    x[t] = 0.1 x[t-1] + 0.3 x[t-2] - 0.4 e[t-1] + e[t]

and the 2-dimensional VARMA(1,1) with matrices
B1 = [[0.1, -0.2], [-0.2, 0.1]] and G1 = [[-0.4, 0.2], [0.2, -0.4]].

Randomness comes from counter-based Philox streams, one per series or video
sequence, so generation is reproducible and safely parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = [
    "DgpSpec",
    "VideoSpec",
    "DGP_KINDS",
    "default_coefficients",
    "simulate",
    "simulate_from_noise",
    "simulate_with_innovations",
    "generate_video",
    "render_square_frames",
    "split",
    "write_series_csv",
    "read_series_csv",
    "sgn",
]

DGP_KINDS = ("arma", "tar", "sgn", "nar", "hetero_ma2", "varma", "sq", "exp")
_MULTIVARIATE = ("varma", "sq", "exp")


def default_coefficients(kind: str) -> dict:
    if kind == "arma":
        return {"alpha": 0.0, "beta": [0.1, 0.3], "gamma": [-0.4]}
    if kind == "tar":
        return {"inner": 0.9, "outer": -0.3, "threshold": 1.0}
    if kind == "sgn":
        return {}
    if kind == "nar":
        return {"scale": 0.7, "shift": 2.0}
    if kind == "hetero_ma2":
        return {"ma": [-0.4, 0.3], "cross": 0.5}
    if kind == "varma":
        return {
            "alpha": [0.0, 0.0],
            "b": [[[0.1, -0.2], [-0.2, 0.1]]],
            "g": [[[-0.4, 0.2], [0.2, -0.4]]],
        }
    if kind in ("sq", "exp"):
        return {"ar": 0.6}
    raise ValueError(f"unknown generating process {kind!r}")


@dataclass(frozen=True)
class DgpSpec:
    """One univariate or bivariate generating process."""

    kind: str
    coefficients: dict = field(default_factory=dict)
    noise_std: float = 1.0
    burn_in: int = 200

    def __post_init__(self) -> None:
        if self.kind not in DGP_KINDS:
            raise ValueError(f"unknown generating process {self.kind!r}; "
                             f"choose one of {DGP_KINDS}")
        merged = default_coefficients(self.kind)
        unknown = set(self.coefficients) - set(merged)
        if unknown:
            raise ValueError(f"unknown coefficients for {self.kind}: {sorted(unknown)}")
        merged.update(self.coefficients)
        object.__setattr__(self, "coefficients", merged)

    @property
    def dim(self) -> int:
        return 2 if self.kind in _MULTIVARIATE else 1


def sgn(x: float) -> float:
    return float(np.sign(x))


def _simulate_arma(coef: dict, eps: np.ndarray) -> np.ndarray:
    alpha = float(coef["alpha"])
    beta = [float(b) for b in coef["beta"]]
    gamma = [float(c) for c in coef["gamma"]]
    n = eps.shape[0]
    x = np.zeros(n)
    for t in range(n):
        v = alpha + eps[t, 0]
        for i, b in enumerate(beta, start=1):
            if t - i >= 0:
                v += b * x[t - i]
        for j, c in enumerate(gamma, start=1):
            if t - j >= 0:
                v += c * eps[t - j, 0]
        x[t] = v
    return x[:, None]


def _simulate_tar(coef: dict, eps: np.ndarray) -> np.ndarray:
    inner, outer, thr = coef["inner"], coef["outer"], coef["threshold"]
    n = eps.shape[0]
    x = np.zeros(n)
    x[0] = eps[0, 0]
    for t in range(1, n):
        slope = inner if abs(x[t - 1]) <= thr else outer
        x[t] = slope * x[t - 1] + eps[t, 0]
    return x[:, None]


def _simulate_sgn(coef: dict, eps: np.ndarray) -> np.ndarray:
    n = eps.shape[0]
    x = np.zeros(n)
    prev = 0.0
    for t in range(n):
        x[t] = sgn(prev) + eps[t, 0]
        prev = x[t]
    return x[:, None]


def _simulate_nar(coef: dict, eps: np.ndarray) -> np.ndarray:
    scale, shift = coef["scale"], coef["shift"]
    n = eps.shape[0]
    x = np.zeros(n)
    prev = 0.0
    for t in range(n):
        x[t] = scale * abs(prev) / abs(prev + shift) + eps[t, 0]
        prev = x[t]
    return x[:, None]


def _simulate_hetero_ma2(coef: dict, eps: np.ndarray) -> np.ndarray:
    ma = [float(c) for c in coef["ma"]]
    cross = float(coef["cross"])
    n = eps.shape[0]
    x = np.zeros(n)
    e = eps[:, 0]
    for t in range(n):
        v = e[t]
        for j, c in enumerate(ma, start=1):
            if t - j >= 0:
                v += c * e[t - j]
        if t - 2 >= 0:
            v += cross * e[t] * e[t - 2]
        x[t] = v
    return x[:, None]


def _simulate_varma(coef: dict, eps: np.ndarray) -> np.ndarray:
    alpha = np.asarray(coef["alpha"], dtype=float)
    bs = [np.asarray(b, dtype=float) for b in coef["b"]]
    gs = [np.asarray(g, dtype=float) for g in coef["g"]]
    n, k = eps.shape
    x = np.zeros((n, k))
    for t in range(n):
        v = alpha + eps[t]
        for i, b in enumerate(bs, start=1):
            if t - i >= 0:
                v = v + b @ x[t - i]
        for j, g in enumerate(gs, start=1):
            if t - j >= 0:
                v = v + g @ eps[t - j]
        x[t] = v
    return x


def _simulate_sq(coef: dict, eps: np.ndarray) -> np.ndarray:
    return _simulate_pair(coef, eps, lambda v: v * v)


def _simulate_exp(coef: dict, eps: np.ndarray) -> np.ndarray:
    return _simulate_pair(coef, eps, np.exp)


def _simulate_pair(coef: dict, eps: np.ndarray, fn) -> np.ndarray:
    ar = float(coef["ar"])
    n = eps.shape[0]
    x = np.zeros((n, 2))
    prev = 0.0
    for t in range(n):
        x1 = ar * prev + eps[t, 0]
        x[t, 0] = x1
        x[t, 1] = fn(x1) + eps[t, 1]
        prev = x1
    return x


_SIMULATORS = {
    "arma": _simulate_arma,
    "tar": _simulate_tar,
    "sgn": _simulate_sgn,
    "nar": _simulate_nar,
    "hetero_ma2": _simulate_hetero_ma2,
    "varma": _simulate_varma,
    "sq": _simulate_sq,
    "exp": _simulate_exp,
}


def simulate_from_noise(spec: DgpSpec, eps: np.ndarray) -> Tensor:
    """Run the recursion from zero initial conditions on given innovations.

    No burn-in is discarded; mainly useful for checking the recursions
    against hand-computed values.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.ndim == 1:
        eps = eps[:, None]
    if eps.shape[1] != spec.dim:
        raise ValueError(f"{spec.kind} needs {spec.dim}-dimensional noise, "
                         f"got shape {eps.shape}")
    return Tensor(_SIMULATORS[spec.kind](spec.coefficients, eps))


def _noise_stream(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, stream))))


def simulate_with_innovations(spec: DgpSpec, n: int, seed: int) -> tuple[Tensor, np.ndarray]:
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = _noise_stream(seed)
    eps = rng.standard_normal((spec.burn_in + n, spec.dim)) * spec.noise_std
    x = simulate_from_noise(spec, eps).array
    return Tensor(x[spec.burn_in:]), eps[spec.burn_in:]


def simulate(spec: DgpSpec, n: int, seed: int) -> Tensor:
    """Generate n steps after burn-in; deterministic per seed."""
    return simulate_with_innovations(spec, n, seed)[0]


# ---------------------------------------------------------------------------
# moving-squares videos


@dataclass(frozen=True)
class VideoSpec:
    """Squares translating across a frame; inputs in [0,1], targets binary.

    The noisy variant adds clipped Gaussian noise to the input frames and
    targets the frame right after the window; the shifted variant keeps
    inputs clean but targets one step further out.
    """

    kind: str = "noisy"  # or "shifted"
    n_frames: int = 10
    height: int = 40
    width: int = 40
    size_range: tuple[int, int] = (4, 8)
    speed_range: tuple[int, int] = (1, 3)
    n_squares: int = 3
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("noisy", "shifted"):
            raise ValueError(f"unknown video kind {self.kind!r}")
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames per sequence")
        if self.size_range[1] > min(self.height, self.width):
            raise ValueError(f"square of size {self.size_range[1]} cannot fit in a "
                             f"{self.height}x{self.width} frame")
        if self.size_range[0] < 1 or self.size_range[0] > self.size_range[1]:
            raise ValueError(f"bad size range {self.size_range}")
        if self.speed_range[0] < 0 or self.speed_range[0] > self.speed_range[1]:
            raise ValueError(f"bad speed range {self.speed_range}")


def render_square_frames(height: int, width: int, squares, n_frames: int) -> np.ndarray:
    """Binary frames of squares on straight-line paths.

    Each square is (row0, col0, size, d_row, d_col); pixels outside the frame
    are clipped away, so squares may enter or leave the window.
    """
    frames = np.zeros((n_frames, height, width))
    for r0, c0, size, dr, dc in squares:
        for t in range(n_frames):
            r, c = r0 + t * dr, c0 + t * dc
            r_lo, r_hi = max(r, 0), min(r + size, height)
            c_lo, c_hi = max(c, 0), min(c + size, width)
            if r_lo < r_hi and c_lo < c_hi:
                frames[t, r_lo:r_hi, c_lo:c_hi] = 1.0
    return frames


def _sample_squares(spec: VideoSpec, rng: np.random.Generator, total_frames: int):
    squares = []
    for _ in range(spec.n_squares):
        size = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
        speeds = []
        for _axis in range(2):
            mag = int(rng.integers(spec.speed_range[0], spec.speed_range[1] + 1))
            sign = 1 if rng.random() < 0.5 else -1
            speeds.append(sign * mag)
        dr, dc = speeds
        pos = []
        for extent, d in ((spec.height, dr), (spec.width, dc)):
            travel = d * (total_frames - 1)
            lo, hi = max(0, -travel), extent - size - max(0, travel)
            if hi < lo:
                # cannot stay fully inside the whole time: anchor fully inside
                # at the final frame, entering the window along the way
                end = int(rng.integers(0, extent - size + 1))
                pos.append(end - travel)
            else:
                pos.append(int(rng.integers(lo, hi + 1)))
        squares.append((pos[0], pos[1], size, dr, dc))
    return squares


def generate_video(spec: VideoSpec, n_sequences: int) -> tuple[Tensor, Tensor]:
    """Build (inputs [N,T,H,W,1], targets [N,H,W,1]); one Philox stream per
    sequence keyed on (spec.seed, sequence index)."""
    if n_sequences < 1:
        raise ValueError("need at least one sequence")
    t_in = spec.n_frames
    total = t_in + 2
    inputs = np.empty((n_sequences, t_in, spec.height, spec.width, 1))
    targets = np.empty((n_sequences, spec.height, spec.width, 1))
    target_step = t_in if spec.kind == "noisy" else t_in + 1
    for i in range(n_sequences):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((spec.seed, i))))
        frames = render_square_frames(spec.height, spec.width,
                                      _sample_squares(spec, rng, total), total)
        window = frames[:t_in]
        if spec.kind == "noisy" and spec.noise_std > 0:
            window = np.clip(window + rng.normal(0.0, spec.noise_std, window.shape),
                             0.0, 1.0)
        inputs[i] = window[..., None]
        targets[i] = frames[target_step][..., None]
    return Tensor(inputs), Tensor(targets)


# ---------------------------------------------------------------------------
# splits and CSV


def split(data: Tensor, train_frac: float = 0.7,
          val_frac_of_train: float = 0.3) -> tuple[Tensor, Tensor, Tensor]:
    """Chronological train/val/test split, floor-then-remainder rounding.

    The leading ``train_frac`` of the data is the training block, of which
    the trailing ``val_frac_of_train`` becomes validation; the remainder of
    the series is the test block. Order is preserved, nothing is shuffled.
    """
    if not 0 < train_frac < 1 or not 0 < val_frac_of_train < 1:
        raise ValueError("fractions must lie in (0, 1)")
    a = data.array if isinstance(data, Tensor) else np.asarray(data, float)
    n = a.shape[0]
    # the tiny epsilon keeps floor() honest against binary-fraction noise
    n_block = int(n * train_frac + 1e-9)
    n_train = int(n_block * (1.0 - val_frac_of_train) + 1e-9)
    n_val = n_block - n_train
    n_test = n - n_block
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} steps leaves an empty part "
                         f"({n_train}/{n_val}/{n_test})")
    return Tensor(a[:n_train]), Tensor(a[n_train:n_block]), Tensor(a[n_block:])


def write_series_csv(path, series: Tensor) -> None:
    a = series.array
    if a.ndim == 1:
        a = a[:, None]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(a.shape[1])])
        for t, row in enumerate(a):
            writer.writerow([t] + [repr(float(v)) for v in row])


def read_series_csv(path) -> Tensor:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: expected a 't,x1[,x2,...]' header, got {header}")
        rows = [[float(v) for v in row[1:]] for row in reader]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return Tensor(np.asarray(rows))


def series_path_exists(path) -> bool:
    return Path(path).exists()
