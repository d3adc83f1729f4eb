"""ARMA recurrent cells, stacked networks, and the ConvARMA cell.

The scalar/vector cell computes

    pred[t] = act( alpha + sum_i lag_w[i] @ x[t-i] - sum_j fb_w[j] @ pred[t-j] )

with ``i = 1..max(p, q)`` input lags (the folded-weight convention) and
``j = 1..q`` feedback lags over the cell's own past predictions. The
convolutional cell replaces the products with same-padded convolutions and
uses a ``+`` on the feedback term:

    pred[t] = act( sum_i W[i] * x[t-i] + sum_j U[j] * pred[t-j] + b )

so a 1x1 ConvARMA with ``U = -fb_w`` reproduces the scalar cell exactly.

Every op exists twice: as a plain numeric function (the inference path) and
as an autodiff graph builder (the training path); tests pin the two paths
against each other and against independent scalar oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph
from .tensor import Activation, ShapeError, Tensor, apply_array, conv2d_same_batch

__all__ = [
    "ArmaLayerParams",
    "ConvArmaParams",
    "BatchNormParams",
    "HeadParams",
    "ConvHeadParams",
    "CellState",
    "NetworkSpec",
    "arma_step",
    "arma_layer_forward",
    "stack_forward",
    "conv_arma_step",
    "conv_arma_layer_forward",
    "conv_network_predict_next",
    "batch_norm_forward",
    "init_params",
    "count_params",
    "build_series_training_graph",
    "build_video_training_graph",
]


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ArmaLayerParams:
    """One ARMA layer: u units over k input series.

    ``lag_weights`` holds one [u x k] matrix per input lag i = 1..max(p, q);
    ``feedback_weights`` one [u x u] matrix per feedback lag j = 1..q (a
    length-u vector per lag when ``diagonal_feedback`` is set). Activations
    are per unit, which is what lets one layer mix a linear unit with ReLU
    units.
    """

    p: int
    q: int
    in_dim: int
    units: int
    lag_weights: list[Tensor]
    feedback_weights: list[Tensor]
    bias: Tensor
    activations: list[Activation]
    diagonal_feedback: bool = False

    @property
    def lag_count(self) -> int:
        return max(self.p, self.q)

    def validate(self) -> None:
        if self.p < 0 or self.q < 0 or self.p + self.q == 0:
            raise ValueError(f"need p + q >= 1, got p={self.p}, q={self.q}")
        if len(self.lag_weights) != self.lag_count:
            raise ValueError(f"expected {self.lag_count} lag weight matrices, "
                             f"got {len(self.lag_weights)}")
        if len(self.feedback_weights) != self.q:
            raise ValueError(f"expected {self.q} feedback matrices, "
                             f"got {len(self.feedback_weights)}")
        if len(self.activations) != self.units:
            raise ValueError("one activation per unit required")
        for w in self.lag_weights:
            if w.shape != (self.units, self.in_dim):
                raise ShapeError(f"lag weight shape {w.shape}, "
                                 f"expected {(self.units, self.in_dim)}")
        fb_shape = (self.units,) if self.diagonal_feedback else (self.units, self.units)
        for w in self.feedback_weights:
            if w.shape != fb_shape:
                raise ShapeError(f"feedback weight shape {w.shape}, expected {fb_shape}")

    @classmethod
    def zeros(cls, p: int, q: int, in_dim: int, units: int,
              activations: list[Activation] | None = None,
              diagonal_feedback: bool = False) -> "ArmaLayerParams":
        acts = activations or [Activation.LINEAR] * units
        m = max(p, q)
        fb_shape = (units,) if diagonal_feedback else (units, units)
        return cls(p, q, in_dim, units,
                   [Tensor.zeros((units, in_dim)) for _ in range(m)],
                   [Tensor.zeros(fb_shape) for _ in range(q)],
                   Tensor.zeros(units), list(acts), diagonal_feedback)


@dataclass
class ConvArmaParams:
    """ConvARMA cell: p input kernels, q feedback kernels, c filters."""

    p: int
    q: int
    in_channels: int
    filters: int
    kernel_size: tuple[int, int]
    input_kernels: list[Tensor]
    feedback_kernels: list[Tensor]
    bias: Tensor
    activation: Activation = Activation.LINEAR

    @property
    def lag_count(self) -> int:
        return max(self.p, self.q)

    @property
    def units(self) -> int:  # channel count doubles as the "width" of the layer
        return self.filters

    def validate(self) -> None:
        if self.p < 1:
            raise ValueError("ConvARMA needs at least one input lag")
        k1, k2 = self.kernel_size
        if len(self.input_kernels) != self.p or len(self.feedback_kernels) != self.q:
            raise ValueError("kernel list lengths must equal p and q")
        for w in self.input_kernels:
            if w.shape != (k1, k2, self.in_channels, self.filters):
                raise ShapeError(f"input kernel shape {w.shape}")
        for u in self.feedback_kernels:
            if u.shape != (k1, k2, self.filters, self.filters):
                raise ShapeError(f"feedback kernel shape {u.shape}")

    @classmethod
    def zeros(cls, p: int, q: int, in_channels: int, filters: int,
              kernel_size: tuple[int, int] = (3, 3),
              activation: Activation = Activation.LINEAR) -> "ConvArmaParams":
        k1, k2 = kernel_size
        return cls(p, q, in_channels, filters, (k1, k2),
                   [Tensor.zeros((k1, k2, in_channels, filters)) for _ in range(p)],
                   [Tensor.zeros((k1, k2, filters, filters)) for _ in range(q)],
                   Tensor.zeros(filters), activation)


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int) -> "BatchNormParams":
        return cls(Tensor(np.ones(channels)), Tensor.zeros(channels),
                   np.zeros(channels), np.ones(channels))


@dataclass
class HeadParams:
    """Dense linear readout applied per time step: out = weight @ y + bias."""

    weight: Tensor  # [out_dim x units]
    bias: Tensor    # [out_dim]

    @classmethod
    def zeros(cls, out_dim: int, units: int) -> "HeadParams":
        return cls(Tensor.zeros((out_dim, units)), Tensor.zeros(out_dim))


@dataclass
class ConvHeadParams:
    """1x1 convolution reducing filters to output channels, then sigmoid."""

    kernel: Tensor  # [1,1,filters,out_channels]
    bias: Tensor    # [out_channels]
    activation: Activation = Activation.SIGMOID

    @classmethod
    def zeros(cls, out_channels: int, filters: int,
              activation: Activation = Activation.SIGMOID) -> "ConvHeadParams":
        return cls(Tensor.zeros((1, 1, filters, out_channels)),
                   Tensor.zeros(out_channels), activation)


@dataclass(frozen=True)
class CellState:
    """Queue of the q most recent predictions, newest first."""

    queue: tuple[Tensor, ...]

    @classmethod
    def zeros(cls, q: int, shape) -> "CellState":
        return cls(tuple(Tensor.zeros(shape) for _ in range(q)))

    def push(self, prediction: Tensor) -> "CellState":
        if not self.queue:
            return self
        return CellState((prediction,) + self.queue[:-1])


@dataclass
class NetworkSpec:
    """Stack of ARMA (or ConvARMA) layers plus a readout head."""

    layers: list
    head: HeadParams | ConvHeadParams
    batch_norm: bool = False
    norms: list[BatchNormParams] = field(default_factory=list)

    @property
    def is_conv(self) -> bool:
        return isinstance(self.layers[0], ConvArmaParams)

    @property
    def lag_consumption(self) -> int:
        return sum(layer.lag_count for layer in self.layers)

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for layer in self.layers:
            layer.validate()
        for prev, nxt in zip(self.layers, self.layers[1:]):
            prev_width = prev.units if isinstance(prev, ArmaLayerParams) else prev.filters
            nxt_width = nxt.in_dim if isinstance(nxt, ArmaLayerParams) else nxt.in_channels
            if prev_width != nxt_width:
                raise ValueError(f"adjacent layers incompatible: {prev_width} units "
                                 f"feed a layer expecting {nxt_width}")
        if self.batch_norm and len(self.norms) != len(self.layers) - 1:
            raise ValueError("need one batch-norm block between consecutive layers")


def count_params(spec: NetworkSpec) -> int:
    total = 0
    for layer in spec.layers:
        if isinstance(layer, ArmaLayerParams):
            tensors = layer.lag_weights + layer.feedback_weights + [layer.bias]
        else:
            tensors = layer.input_kernels + layer.feedback_kernels + [layer.bias]
        total += sum(t.data.size for t in tensors)
    if isinstance(spec.head, HeadParams):
        total += spec.head.weight.data.size + spec.head.bias.data.size
    else:
        total += spec.head.kernel.data.size + spec.head.bias.data.size
    for bn in spec.norms:
        total += bn.gamma.data.size + bn.beta.data.size
    return total


# ---------------------------------------------------------------------------
# numeric forward path


def _apply_per_unit(acts: list[Activation], pre: np.ndarray) -> np.ndarray:
    if all(a is acts[0] for a in acts):
        return apply_array(acts[0], pre)
    out = np.empty_like(pre)
    for j, act in enumerate(acts):
        out[..., j] = apply_array(act, pre[..., j])
    return out


def arma_step(params: ArmaLayerParams, lag_window: Tensor,
              state: CellState) -> tuple[Tensor, CellState]:
    """One cell step. ``lag_window`` row i-1 holds x[t-i]; the state queue
    holds the q most recent predictions, newest first."""
    m = params.lag_count
    lw = lag_window.array
    if lw.ndim != 2 or lw.shape[0] != m:
        raise ShapeError(f"lag window must be [{m} x {params.in_dim}], got {lw.shape}")
    if len(state.queue) != params.q:
        raise ShapeError(f"state holds {len(state.queue)} predictions, expected {params.q}")
    pre = params.bias.array.copy()
    for i in range(m):
        pre = pre + params.lag_weights[i].array @ lw[i]
    for j in range(params.q):
        fb = params.feedback_weights[j].array
        prev = state.queue[j].array
        pre = pre - (fb * prev if params.diagonal_feedback else fb @ prev)
    pred = Tensor(_apply_per_unit(params.activations, pre))
    return pred, state.push(pred)


def arma_layer_forward(params: ArmaLayerParams, series: Tensor,
                       initial_state: CellState | None = None) -> Tensor:
    """Teacher-forced pass over a [T x k] series, zero-initialized feedback.

    Emits predictions for t = max(p,q)..T-1, shape [(T - max(p,q)) x u].
    """
    x = series.array
    m = params.lag_count
    if x.ndim != 2:
        raise ShapeError(f"series must be [T x k], got {x.shape}")
    if x.shape[0] <= m:
        raise ShapeError(f"series too short: length {x.shape[0]}, "
                         f"need at least {m + 1}")
    state = initial_state if initial_state is not None \
        else CellState.zeros(params.q, params.units)
    out = np.empty((x.shape[0] - m, params.units))
    for t in range(m, x.shape[0]):
        window = Tensor(x[t - m:t][::-1])  # row 0 is x[t-1]
        pred, state = arma_step(params, window, state)
        out[t - m] = pred.array
    return Tensor(out)


def stack_forward(spec: NetworkSpec, series: Tensor) -> Tensor:
    """Run stacked layers and the dense head; each layer consumes its own
    lags from the previous layer's full prediction sequence."""
    spec.validate()
    needed = spec.lag_consumption + 1
    if series.shape[0] < needed:
        raise ShapeError(f"series length {series.shape[0]} too short for the "
                         f"stack, need at least {needed}")
    seq = series
    for layer in spec.layers:
        seq = arma_layer_forward(layer, seq)
    head: HeadParams = spec.head
    out = seq.array @ head.weight.array.T + head.bias.array
    return Tensor(out)


def conv_arma_step(params: ConvArmaParams, frame_lags: list[Tensor],
                   state: CellState) -> tuple[Tensor, CellState]:
    """One ConvARMA step. ``frame_lags[i-1]`` holds frame x[t-i]."""
    if len(frame_lags) != params.p:
        raise ShapeError(f"expected {params.p} lagged frames, got {len(frame_lags)}")
    if len(state.queue) != params.q:
        raise ShapeError(f"state holds {len(state.queue)} frames, expected {params.q}")
    spatial = frame_lags[0].shape[:2]
    for f in frame_lags:
        if f.shape[:2] != spatial:
            raise ShapeError(f"frame spatial dims differ: {f.shape[:2]} vs {spatial}")
    for s in state.queue:
        if s.shape[:2] != spatial:
            raise ShapeError(f"state spatial dims {s.shape[:2]} differ from "
                             f"frames {spatial}")
    pre = np.zeros(spatial + (params.filters,))
    for i in range(params.p):
        pre = pre + conv2d_same_batch(frame_lags[i].array[None],
                                      params.input_kernels[i].array)[0]
    for j in range(params.q):
        pre = pre + conv2d_same_batch(state.queue[j].array[None],
                                      params.feedback_kernels[j].array)[0]
    pre = pre + params.bias.array
    pred = Tensor(apply_array(params.activation, pre))
    return pred, state.push(pred)


def conv_arma_layer_forward(params: ConvArmaParams, frames: Tensor,
                            extend: int = 0) -> Tensor:
    """Teacher-forced pass over [T,H,W,C] frames.

    With ``extend=1`` the recursion runs one step past the final frame
    (possible because step t only reads frames before t), emitting the
    genuine next-frame prediction as the last element.
    """
    x = frames.array
    m = params.lag_count
    if x.ndim != 4:
        raise ShapeError(f"frames must be [T,H,W,C], got {x.shape}")
    if x.shape[0] <= m - 1 + (1 - extend):
        raise ShapeError(f"need more than {m} frames, got {x.shape[0]}")
    state = CellState.zeros(params.q, x.shape[1:3] + (params.filters,))
    steps = range(m, x.shape[0] + extend)
    out = np.empty((len(steps),) + x.shape[1:3] + (params.filters,))
    for idx, t in enumerate(steps):
        lags = [Tensor(x[t - i]) for i in range(1, params.p + 1)]
        pred, state = conv_arma_step(params, lags, state)
        out[idx] = pred.array
    return Tensor(out)


def conv_network_predict_next(spec: NetworkSpec, frames: Tensor) -> Tensor:
    """Predict the frame following ``frames`` through the whole conv stack.

    Batch-norm blocks run in eval mode from their running statistics.
    """
    spec.validate()
    seq = conv_arma_layer_forward(spec.layers[0], frames, extend=1)
    for li, layer in enumerate(spec.layers[1:], start=1):
        if spec.batch_norm:
            bn = spec.norms[li - 1]
            seq = batch_norm_forward(seq, bn, mode="eval")
        seq = conv_arma_layer_forward(layer, seq)
    head: ConvHeadParams = spec.head
    last = seq.array[-1]
    out = conv2d_same_batch(last[None], head.kernel.array)[0] + head.bias.array
    return Tensor(apply_array(head.activation, out))


def batch_norm_forward(x: Tensor, params: BatchNormParams, mode: str) -> Tensor:
    """Per-channel batch normalization over all leading axes.

    Train mode normalizes by batch statistics and folds them into the
    running estimates with the configured momentum; eval mode uses the
    running estimates. Mutates ``params`` running stats in train mode.
    """
    a = x.array
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    axes = tuple(range(a.ndim - 1))
    if mode == "train":
        n = a.size // a.shape[-1]
        if n < 2:
            raise ValueError("train-mode batch norm needs at least 2 samples per channel")
        mu = a.mean(axis=axes)
        var = a.var(axis=axes)
        params.running_mean = params.momentum * params.running_mean + (1 - params.momentum) * mu
        params.running_var = params.momentum * params.running_var + (1 - params.momentum) * var
    else:
        mu, var = params.running_mean, params.running_var
    xhat = (a - mu) / np.sqrt(var + params.eps)
    return Tensor(params.gamma.array * xhat + params.beta.array)


# ---------------------------------------------------------------------------
# initialization


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape))


def init_params(spec: NetworkSpec, seed: int) -> NetworkSpec:
    """Same architecture, fresh Glorot-uniform weights and zero biases.

    Deterministic per seed: every weight tensor draws from its own
    counter-based Philox stream.
    """
    counter = 0

    def stream() -> np.random.Generator:
        nonlocal counter
        counter += 1
        return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, counter))))

    layers = []
    for layer in spec.layers:
        if isinstance(layer, ArmaLayerParams):
            u, k = layer.units, layer.in_dim
            lw = [_glorot(stream(), (u, k), k, u) for _ in range(layer.lag_count)]
            if layer.diagonal_feedback:
                fw = [_glorot(stream(), (u,), u, u) for _ in range(layer.q)]
            else:
                fw = [_glorot(stream(), (u, u), u, u) for _ in range(layer.q)]
            layers.append(replace(layer, lag_weights=lw, feedback_weights=fw,
                                  bias=Tensor.zeros(u)))
        else:
            k1, k2 = layer.kernel_size
            ci, c = layer.in_channels, layer.filters
            wk = [_glorot(stream(), (k1, k2, ci, c), k1 * k2 * ci, k1 * k2 * c)
                  for _ in range(layer.p)]
            uk = [_glorot(stream(), (k1, k2, c, c), k1 * k2 * c, k1 * k2 * c)
                  for _ in range(layer.q)]
            layers.append(replace(layer, input_kernels=wk, feedback_kernels=uk,
                                  bias=Tensor.zeros(c)))
    if isinstance(spec.head, HeadParams):
        out_dim, u = spec.head.weight.shape
        head = HeadParams(_glorot(stream(), (out_dim, u), u, out_dim),
                          Tensor.zeros(out_dim))
    else:
        _, _, c, out_c = spec.head.kernel.shape
        head = ConvHeadParams(_glorot(stream(), (1, 1, c, out_c), c, out_c),
                              Tensor.zeros(out_c), spec.head.activation)
    norms = [BatchNormParams.identity(len(bn.gamma.data)) for bn in spec.norms]
    return NetworkSpec(layers, head, spec.batch_norm, norms)


# ---------------------------------------------------------------------------
# autodiff graph builders (training path)


@dataclass
class BuiltModel:
    graph: Graph
    step_inputs: list[int]
    aux_inputs: dict[str, int]
    output_nodes: list[tuple[int, int]]  # (node id, window index it predicts)
    loss_id: int
    param_nodes: dict[str, int]
    spec: NetworkSpec

    def export_spec(self) -> NetworkSpec:
        """Copy current graph parameter values back into a NetworkSpec."""
        return _params_from_graph(self)


def _activation_nodes(g: Graph, acts: list[Activation], pre: int,
                      masks: dict[Activation, int]) -> int:
    if all(a is acts[0] for a in acts):
        if acts[0] is Activation.LINEAR:
            return pre
        return g.apply(acts[0], pre)
    out = None
    for act, mask in masks.items():
        branch = pre if act is Activation.LINEAR else g.apply(act, pre)
        term = g.mul(branch, mask)
        out = term if out is None else g.add(out, term)
    return out


def _mask_nodes(g: Graph, acts: list[Activation]) -> dict[Activation, int]:
    if all(a is acts[0] for a in acts):
        return {}
    masks: dict[Activation, int] = {}
    for act in dict.fromkeys(acts):
        vec = np.array([1.0 if a is act else 0.0 for a in acts])
        masks[act] = g.constant(vec)
    return masks


def build_series_training_graph(spec: NetworkSpec, window_len: int) -> BuiltModel:
    """Unroll the stacked ARMA network over a window of per-step inputs.

    Inputs are one [B x k] node per window step plus a scalar ``loss_scale``
    (bound to 1 / (steps * batch * out_dim)); the loss is the MSE of the
    one-step predictions against the window's own later steps. Graph-side
    weight matrices are stored transposed so each step is a single matmul.
    """
    spec.validate()
    if window_len <= spec.lag_consumption:
        raise ShapeError(f"window of {window_len} cannot cover "
                         f"{spec.lag_consumption} lags plus a target")
    g = Graph()
    params: dict[str, int] = {}
    steps = [g.input(name=f"x{t}") for t in range(window_len)]
    seq: list[tuple[int, int]] = [(nid, t) for t, nid in enumerate(steps)]

    for li, layer in enumerate(spec.layers):
        m, q = layer.lag_count, layer.q
        lag_nodes = [g.parameter(layer.lag_weights[i].array.T, name=f"layer{li}.beta{i + 1}")
                     for i in range(m)]
        if layer.diagonal_feedback:
            fb_nodes = [g.parameter(layer.feedback_weights[j].array,
                                    name=f"layer{li}.gamma{j + 1}") for j in range(q)]
        else:
            fb_nodes = [g.parameter(layer.feedback_weights[j].array.T,
                                    name=f"layer{li}.gamma{j + 1}") for j in range(q)]
        alpha = g.parameter(layer.bias.array, name=f"layer{li}.alpha")
        for name, nid in zip([f"layer{li}.beta{i + 1}" for i in range(m)]
                             + [f"layer{li}.gamma{j + 1}" for j in range(q)]
                             + [f"layer{li}.alpha"],
                             lag_nodes + fb_nodes + [alpha]):
            params[name] = nid
        masks = _mask_nodes(g, layer.activations)

        preds: list[tuple[int, int]] = []
        for s in range(m, len(seq)):
            acc = g.matmul(seq[s - 1][0], lag_nodes[0])
            for i in range(2, m + 1):
                acc = g.add(acc, g.matmul(seq[s - i][0], lag_nodes[i - 1]))
            acc = g.add(acc, alpha)
            for j in range(1, q + 1):
                if len(preds) >= j:
                    prev = preds[-j][0]
                    fb = g.mul(prev, fb_nodes[j - 1]) if layer.diagonal_feedback \
                        else g.matmul(prev, fb_nodes[j - 1])
                    acc = g.sub(acc, fb)
            preds.append((_activation_nodes(g, layer.activations, acc, masks),
                          seq[s][1]))
        seq = preds

    head: HeadParams = spec.head
    w_head = g.parameter(head.weight.array.T, name="head.weight")
    b_head = g.parameter(head.bias.array, name="head.bias")
    params["head.weight"] = w_head
    params["head.bias"] = b_head
    outputs = [(g.add(g.matmul(nid, w_head), b_head), t) for nid, t in seq]

    total = None
    for nid, t in outputs:
        sse = g.sum(g.square(g.sub(nid, steps[t])))
        total = sse if total is None else g.add(total, sse)
    scale = g.input(name="loss_scale")
    loss = g.mul(total, scale)
    return BuiltModel(g, steps, {"loss_scale": scale}, outputs, loss, params, spec)


def build_video_training_graph(spec: NetworkSpec, n_frames: int) -> BuiltModel:
    """Unroll the ConvARMA stack over a frame window plus the target step.

    Inputs: one [B,H,W,C] node per observed frame, ``target`` (binary frame),
    and ``ones`` (same shape as target). The loss is the clipped binary
    cross-entropy of the final prediction against the target.
    """
    spec.validate()
    if n_frames < spec.layers[0].lag_count:
        raise ShapeError(f"need at least {spec.layers[0].lag_count} frames, "
                         f"got {n_frames}")
    g = Graph()
    params: dict[str, int] = {}
    steps = [g.input(name=f"x{t}") for t in range(n_frames)]
    target = g.input(name="target")
    ones = g.input(name="ones")

    seq: list[int] = list(steps)
    for li, layer in enumerate(spec.layers):
        m, p, q = layer.lag_count, layer.p, layer.q
        w_nodes = [g.parameter(layer.input_kernels[i].array, name=f"layer{li}.beta{i + 1}")
                   for i in range(p)]
        u_nodes = [g.parameter(layer.feedback_kernels[j].array,
                               name=f"layer{li}.gamma{j + 1}") for j in range(q)]
        b_node = g.parameter(layer.bias.array, name=f"layer{li}.alpha")
        for name, nid in zip([f"layer{li}.beta{i + 1}" for i in range(p)]
                             + [f"layer{li}.gamma{j + 1}" for j in range(q)]
                             + [f"layer{li}.alpha"],
                             w_nodes + u_nodes + [b_node]):
            params[name] = nid

        extend = 1 if li == 0 else 0  # only the first layer steps past its inputs
        preds: list[int] = []
        for s in range(m, len(seq) + extend):
            acc = g.conv2d_same(seq[s - 1], w_nodes[0])
            for i in range(2, p + 1):
                acc = g.add(acc, g.conv2d_same(seq[s - i], w_nodes[i - 1]))
            for j in range(1, q + 1):
                if len(preds) >= j:
                    acc = g.add(acc, g.conv2d_same(preds[-j], u_nodes[j - 1]))
            acc = g.add(acc, b_node)
            if layer.activation is not Activation.LINEAR:
                acc = g.apply(layer.activation, acc)
            preds.append(acc)
        if spec.batch_norm and li < len(spec.layers) - 1:
            bn = spec.norms[li]
            gamma = g.parameter(bn.gamma.array, name=f"norm{li}.gamma")
            beta = g.parameter(bn.beta.array, name=f"norm{li}.beta")
            params[f"norm{li}.gamma"] = gamma
            params[f"norm{li}.beta"] = beta
            preds = [g.batch_norm(nid, gamma, beta, bn.eps) for nid in preds]
        seq = preds

    head: ConvHeadParams = spec.head
    k_head = g.parameter(head.kernel.array, name="head.weight")
    b_head = g.parameter(head.bias.array, name="head.bias")
    params["head.weight"] = k_head
    params["head.bias"] = b_head
    logits = g.add(g.conv2d_same(seq[-1], k_head), b_head)
    prob = g.apply(head.activation, logits)

    pc = g.clip(prob, 1e-7, 1.0 - 1e-7)
    term_pos = g.mul(target, g.log(pc))
    term_neg = g.mul(g.sub(ones, target), g.log(g.sub(ones, pc)))
    loss = g.sub(g.constant(0.0), g.mean(g.add(term_pos, term_neg)))
    return BuiltModel(g, steps, {"target": target, "ones": ones},
                      [(prob, n_frames)], loss, params, spec)


def _params_from_graph(model: BuiltModel) -> NetworkSpec:
    g, spec = model.graph, model.spec
    layers = []
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, ArmaLayerParams):
            lw = [Tensor(g.parameter_value(model.param_nodes[f"layer{li}.beta{i + 1}"]).T)
                  for i in range(layer.lag_count)]
            if layer.diagonal_feedback:
                fw = [Tensor(g.parameter_value(model.param_nodes[f"layer{li}.gamma{j + 1}"]))
                      for j in range(layer.q)]
            else:
                fw = [Tensor(g.parameter_value(model.param_nodes[f"layer{li}.gamma{j + 1}"]).T)
                      for j in range(layer.q)]
            layers.append(replace(layer, lag_weights=lw, feedback_weights=fw,
                                  bias=Tensor(g.parameter_value(model.param_nodes[f"layer{li}.alpha"]))))
        else:
            wk = [Tensor(g.parameter_value(model.param_nodes[f"layer{li}.beta{i + 1}"]))
                  for i in range(layer.p)]
            uk = [Tensor(g.parameter_value(model.param_nodes[f"layer{li}.gamma{j + 1}"]))
                  for j in range(layer.q)]
            layers.append(replace(layer, input_kernels=wk, feedback_kernels=uk,
                                  bias=Tensor(g.parameter_value(model.param_nodes[f"layer{li}.alpha"]))))
    norms = []
    for li, bn in enumerate(spec.norms):
        name = f"norm{li}.gamma"
        if name in model.param_nodes:
            norms.append(BatchNormParams(
                Tensor(model.graph.parameter_value(model.param_nodes[name])),
                Tensor(model.graph.parameter_value(model.param_nodes[f"norm{li}.beta"])),
                bn.running_mean.copy(), bn.running_var.copy(), bn.momentum, bn.eps))
        else:
            norms.append(bn)
    if isinstance(spec.head, HeadParams):
        head = HeadParams(Tensor(g.parameter_value(model.param_nodes["head.weight"]).T),
                          Tensor(g.parameter_value(model.param_nodes["head.bias"])))
    else:
        head = ConvHeadParams(Tensor(g.parameter_value(model.param_nodes["head.weight"])),
                              Tensor(g.parameter_value(model.param_nodes["head.bias"])),
                              spec.head.activation)
    return NetworkSpec(layers, head, spec.batch_norm, norms)
