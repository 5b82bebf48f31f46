"""NBV-Net and the fully connected baseline, written directly against numpy.

Tensors are batched as (N, C, X, Y, Z); dense layers see (N, features).
Every backward pass is derived by hand for its layer type.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nbv_planner.errors import InvalidArgumentError
from nbv_planner.models import Architecture

INIT_STD = 0.1
Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class Train:
    """Forward mode with inverted dropout driven by `seed`."""

    seed: Seed = 0


@dataclass(frozen=True)
class Eval:
    pass


Mode = Union[Train, Eval]
EVAL = Eval()


@dataclass
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.weight.copy(), self.bias.copy())


# --- raw kernels --------------------------------------------------------------


def same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    """(output edge, pad before, pad after) for same padding with ceil-mode output."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def conv3d_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, k: int, s: int
) -> tuple[np.ndarray, dict[str, Any]]:
    """Same-padded strided 3D cross-correlation of a (N, C, X, Y, Z) batch."""
    if x.ndim != 5 or weight.ndim != 5 or x.shape[1] != weight.shape[1]:
        raise InvalidArgumentError(
            f"conv input {x.shape} does not match weights {weight.shape}"
        )
    if weight.shape[2:] != (k, k, k):
        raise InvalidArgumentError(f"conv weights {weight.shape} are not {k}x{k}x{k} kernels")

    plan = [same_padding(n, k, s) for n in x.shape[2:]]
    pad = ((0, 0), (0, 0)) + tuple((lo, hi) for _, lo, hi in plan)
    xp = np.pad(x, pad)
    ox, oy, oz = (o for o, _, _ in plan)
    windows = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    windows = windows[:, :, ::s, ::s, ::s][:, :, :ox, :oy, :oz]

    out = np.tensordot(windows, weight, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = out.transpose(0, 4, 1, 2, 3) + bias[None, :, None, None, None]
    cache = {"x_shape": x.shape, "xp_shape": xp.shape, "windows": windows, "plan": plan}
    return np.ascontiguousarray(out), cache


def conv3d_backward(
    grad: np.ndarray, weight: np.ndarray, cache: dict[str, Any], k: int, s: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (input grad, weight grad, bias grad)."""
    windows = cache["windows"]
    d_bias = grad.sum(axis=(0, 2, 3, 4))
    d_weight = np.tensordot(grad, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4]))

    dxp = np.zeros(cache["xp_shape"])
    ox, oy, oz = grad.shape[2:]
    for a in range(k):
        for b in range(k):
            for c in range(k):
                contrib = np.tensordot(grad, weight[:, :, a, b, c], axes=([1], [0]))
                dxp[
                    :,
                    :,
                    a : a + s * (ox - 1) + 1 : s,
                    b : b + s * (oy - 1) + 1 : s,
                    c : c + s * (oz - 1) + 1 : s,
                ] += contrib.transpose(0, 4, 1, 2, 3)

    n = cache["x_shape"]
    (_, lx, _), (_, ly, _), (_, lz, _) = cache["plan"]
    d_x = dxp[:, :, lx : lx + n[2], ly : ly + n[3], lz : lz + n[4]]
    return d_x, d_weight, d_bias


def maxpool3d_forward(x: np.ndarray, s: int) -> tuple[np.ndarray, dict[str, Any]]:
    """Window = stride = s, ceil mode: partial windows at the far edges are kept."""
    n, ch, *edges = x.shape
    outs = [-(-e // s) for e in edges]
    pad = ((0, 0), (0, 0)) + tuple((0, o * s - e) for o, e in zip(outs, edges))
    xp = np.pad(x, pad, constant_values=-np.inf)
    ox, oy, oz = outs
    blocks = xp.reshape(n, ch, ox, s, oy, s, oz, s).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    blocks = blocks.reshape(n, ch, ox, oy, oz, s**3)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, {"x_shape": x.shape, "xp_shape": xp.shape, "argmax": arg}


def maxpool3d_backward(grad: np.ndarray, cache: dict[str, Any], s: int) -> np.ndarray:
    n, ch, ox, oy, oz = grad.shape
    blocks = np.zeros((n, ch, ox, oy, oz, s**3))
    np.put_along_axis(blocks, cache["argmax"][..., None], grad[..., None], axis=-1)
    dxp = blocks.reshape(n, ch, ox, oy, oz, s, s, s).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    dxp = dxp.reshape(cache["xp_shape"])
    _, _, ex, ey, ez = cache["x_shape"]
    return dxp[:, :, :ex, :ey, :ez]


# --- layer specs ---------------------------------------------------------------


@dataclass(frozen=True)
class Conv3d:
    filters: int
    kernel: int = 3
    stride: int = 1

    def __post_init__(self) -> None:
        if min(self.filters, self.kernel, self.stride) < 1:
            raise InvalidArgumentError(f"invalid convolution {self}")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return (self.filters,) + tuple(-(-e // self.stride) for e in shape[1:])

    def param_shapes(self, shape: tuple[int, ...]) -> tuple[tuple[int, ...], tuple[int, ...]]:
        k = self.kernel
        return (self.filters, shape[0], k, k, k), (self.filters,)

    def __str__(self) -> str:
        return f"C({self.filters},{self.kernel},{self.stride})"


@dataclass(frozen=True)
class MaxPool3d:
    stride: int = 2

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise InvalidArgumentError(f"invalid pooling stride {self.stride}")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return (shape[0],) + tuple(-(-e // self.stride) for e in shape[1:])

    def __str__(self) -> str:
        return f"P({self.stride})"


@dataclass(frozen=True)
class Dense:
    units: int

    def __post_init__(self) -> None:
        if self.units < 1:
            raise InvalidArgumentError(f"invalid dense width {self.units}")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(shape) != 1:
            raise InvalidArgumentError(f"dense layer needs a flat input, got {shape}")
        return (self.units,)

    def param_shapes(self, shape: tuple[int, ...]) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return (self.units, shape[0]), (self.units,)

    def __str__(self) -> str:
        return f"FC({self.units})"


@dataclass(frozen=True)
class Relu:
    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def __str__(self) -> str:
        return "R"


@dataclass(frozen=True)
class Dropout:
    keep: float = 0.7

    def __post_init__(self) -> None:
        if not 0.0 < self.keep <= 1.0:
            raise InvalidArgumentError(f"dropout keep must be in (0, 1], got {self.keep}")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def __str__(self) -> str:
        return f"D({self.keep:g})"


@dataclass(frozen=True)
class Flatten:
    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return (int(np.prod(shape)),)

    def __str__(self) -> str:
        return "F"


LayerSpec = Union[Conv3d, MaxPool3d, Dense, Relu, Dropout, Flatten]


def nbvnet_layers(num_classes: int = 14, keep: float = 0.7) -> list[LayerSpec]:
    """Three conv/pool stages, then FC(1500)-FC(500)-FC(100)-FC(50)-FC(classes).

    ReLU follows every layer except pooling and the output; dropout follows the
    last convolution and every hidden FC layer.
    """
    layers: list[LayerSpec] = [
        Conv3d(10, 3, 2), Relu(), MaxPool3d(2),
        Conv3d(12, 3, 2), Relu(), MaxPool3d(2),
        Conv3d(8, 3, 2), Relu(), Dropout(keep), MaxPool3d(2),
        Flatten(),
    ]  # fmt: skip
    for units in (1500, 500, 100, 50):
        layers += [Dense(units), Relu(), Dropout(keep)]
    layers.append(Dense(num_classes))
    return layers


def fcbaseline_layers(num_classes: int = 14, keep: float = 0.7) -> list[LayerSpec]:
    """FC(1500)-FC(750)-FC(100)-FC(50) with a softmax head over the classes."""
    layers: list[LayerSpec] = [Flatten()]
    for units in (1500, 750, 100, 50):
        layers += [Dense(units), Relu(), Dropout(keep)]
    layers.append(Dense(num_classes))
    return layers


def architecture_layers(
    architecture: Architecture, num_classes: int = 14, keep: float = 0.7
) -> list[LayerSpec]:
    if architecture == Architecture.NBVNET:
        return nbvnet_layers(num_classes, keep)
    return fcbaseline_layers(num_classes, keep)


@dataclass
class NetworkParams:
    """Layer stack with weights for every Conv3d and Dense entry (None elsewhere)."""

    architecture: Architecture
    layers: tuple[LayerSpec, ...]
    params: list[Optional[LayerParams]]
    seed: int = 0

    @property
    def num_classes(self) -> int:
        last = [layer for layer in self.layers if isinstance(layer, Dense)][-1]
        return last.units

    def parametric(self) -> list[tuple[LayerSpec, LayerParams]]:
        return [(layer, p) for layer, p in zip(self.layers, self.params) if p is not None]

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases in layer order."""
        out = []
        for p in self.params:
            if p is not None:
                out += [p.weight, p.bias]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "NetworkParams":
        it = iter(arrays)
        params = [None if p is None else LayerParams(next(it), next(it)) for p in self.params]
        return replace(self, params=params)

    def copy(self) -> "NetworkParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def describe(self) -> str:
        return "-".join(str(layer) for layer in self.layers)


def truncated_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float = INIT_STD
) -> np.ndarray:
    """N(0, std^2) with every draw beyond 2 std redrawn."""
    values = rng.normal(0.0, std, size=shape)
    bad = np.abs(values) > 2.0 * std
    while bad.any():
        values[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(values) > 2.0 * std
    return values


def init_params(
    architecture: Architecture,
    seed: int = 0,
    num_classes: int = 14,
    input_edge: int = 32,
    keep: float = 0.7,
    layers: Optional[Sequence[LayerSpec]] = None,
) -> NetworkParams:
    """Truncated-normal weights and zero biases, deterministic per seed.

    `layers` replaces the architecture's stack (used for small test networks).
    """
    stack = tuple(layers) if layers is not None else tuple(
        architecture_layers(architecture, num_classes, keep)
    )
    rng = np.random.Generator(np.random.PCG64(seed))
    shape: tuple[int, ...] = (1, input_edge, input_edge, input_edge)
    params: list[Optional[LayerParams]] = []
    for layer in stack:
        if isinstance(layer, (Conv3d, Dense)):
            w_shape, b_shape = layer.param_shapes(shape)
            params.append(LayerParams(truncated_normal(rng, w_shape), np.zeros(b_shape)))
        else:
            params.append(None)
        shape = layer.output_shape(shape)
    if len(shape) != 1:
        raise InvalidArgumentError(f"layer stack ends in shape {shape}, expected logits")
    return NetworkParams(architecture, stack, params, seed)


# --- forward / backward --------------------------------------------------------


@dataclass
class ForwardCache:
    entries: list[Any] = field(default_factory=list)
    batched: bool = True


def as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Accept a grid (X,Y,Z), a tensor (C,X,Y,Z) or a batch (N,C,X,Y,Z)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None, None], False
    if x.ndim == 4:
        return x[None], False
    if x.ndim == 5:
        return x, True
    raise InvalidArgumentError(f"cannot feed an input of shape {x.shape} to the network")


def _forward_batch(params: NetworkParams, x: np.ndarray, mode: Mode) -> tuple[np.ndarray, list]:
    rng = np.random.Generator(np.random.PCG64(mode.seed)) if isinstance(mode, Train) else None
    cache: list[Any] = []
    for layer, p in zip(params.layers, params.params):
        if isinstance(layer, Conv3d):
            assert p is not None
            x, entry = conv3d_forward(x, p.weight, p.bias, layer.kernel, layer.stride)
        elif isinstance(layer, MaxPool3d):
            x, entry = maxpool3d_forward(x, layer.stride)
        elif isinstance(layer, Dense):
            assert p is not None
            if x.ndim != 2 or x.shape[1] != p.weight.shape[1]:
                raise InvalidArgumentError(
                    f"dense input {x.shape} does not match weights {p.weight.shape}"
                )
            entry = x
            x = x @ p.weight.T + p.bias
        elif isinstance(layer, Relu):
            entry = x > 0
            x = x * entry
        elif isinstance(layer, Dropout):
            if rng is None or layer.keep == 1.0:
                entry = None
            else:
                entry = (rng.random(x.shape) < layer.keep) / layer.keep
                x = x * entry
        else:
            entry = x.shape
            x = x.reshape(x.shape[0], -1)
        cache.append(entry)
    return x, cache


def forward(
    params: NetworkParams, x: np.ndarray, mode: Mode = EVAL
) -> tuple[np.ndarray, ForwardCache]:
    """Logits of shape (classes,) for a single input or (N, classes) for a batch."""
    batch, batched = as_batch(x)
    logits, entries = _forward_batch(params, batch, mode)
    if not batched:
        logits = logits[0]
    return logits, ForwardCache(entries, batched)


def _backward(
    params: NetworkParams, cache: list[Any], grad: np.ndarray
) -> list[Optional[LayerParams]]:
    grads: list[Optional[LayerParams]] = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer, p, entry = params.layers[i], params.params[i], cache[i]
        if isinstance(layer, Conv3d):
            assert p is not None
            grad, d_w, d_b = conv3d_backward(grad, p.weight, entry, layer.kernel, layer.stride)
            grads[i] = LayerParams(d_w, d_b)
        elif isinstance(layer, MaxPool3d):
            grad = maxpool3d_backward(grad, entry, layer.stride)
        elif isinstance(layer, Dense):
            assert p is not None
            grads[i] = LayerParams(grad.T @ entry, grad.sum(axis=0))
            grad = grad @ p.weight
        elif isinstance(layer, Relu):
            grad = grad * entry
        elif isinstance(layer, Dropout):
            if entry is not None:
                grad = grad * entry
        else:
            grad = grad.reshape(entry)
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss_and_grad_sum(
    params: NetworkParams, inputs: np.ndarray, labels: Sequence[int], mode: Mode = EVAL
) -> tuple[float, list[np.ndarray]]:
    """Summed (not averaged) cross-entropy and gradients, in `params.arrays()` order."""
    batch, _ = as_batch(inputs)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) == 0 or len(y) != len(batch):
        raise InvalidArgumentError(f"{len(batch)} inputs but {len(y)} labels")
    num_classes = params.num_classes
    if y.min() < 0 or y.max() >= num_classes:
        raise InvalidArgumentError(
            f"labels must lie in [0, {num_classes}), got {y.min()}..{y.max()}"
        )

    logits, cache = _forward_batch(params, batch, mode)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(len(y)), y].sum())
    d_logits = np.exp(logp)
    d_logits[np.arange(len(y)), y] -= 1.0

    grads = _backward(params, cache, d_logits)
    flat: list[np.ndarray] = []
    for g in grads:
        if g is not None:
            flat += [g.weight, g.bias]
    return loss, flat


def loss_and_backward(
    params: NetworkParams, inputs: np.ndarray, labels: Sequence[int], mode: Mode = EVAL
) -> tuple[float, list[np.ndarray]]:
    """Mean softmax cross-entropy over the batch and its gradients."""
    loss, grads = loss_and_grad_sum(params, inputs, labels, mode)
    n = len(np.asarray(labels).reshape(-1))
    return loss / n, [g / n for g in grads]


def predict(params: NetworkParams, grid: np.ndarray) -> tuple[int, np.ndarray]:
    """Class id (lowest on ties) and class probabilities for one grid tensor."""
    logits, _ = forward(params, grid, EVAL)
    if logits.ndim != 1:
        raise InvalidArgumentError("predict takes a single grid, not a batch")
    probs = softmax(logits)
    return int(np.argmax(probs)), probs


def predict_batch(params: NetworkParams, grids: np.ndarray, chunk: int = 50) -> np.ndarray:
    """Predicted class per grid of a (N, X, Y, Z) stack."""
    grids = np.asarray(grids)
    labels = []
    for start in range(0, len(grids), chunk):
        batch = grids[start : start + chunk, None].astype(np.float64)
        logits, _ = _forward_batch(params, batch, EVAL)
        labels.append(np.argmax(logits, axis=1))
    return np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)


def forward_flops(params: NetworkParams, input_edge: int) -> int:
    """Approximate multiply-adds of one forward pass."""
    shape: tuple[int, ...] = (1, input_edge, input_edge, input_edge)
    total = 0
    for layer in params.layers:
        out = layer.output_shape(shape)
        if isinstance(layer, Conv3d):
            total += int(np.prod(out)) * shape[0] * layer.kernel**3
        elif isinstance(layer, Dense):
            total += shape[0] * layer.units
        shape = out
    return total


def check_input_edge(params: NetworkParams, input_edge: int) -> None:
    """Raise if a grid of this edge cannot flow through the stack."""
    shape: tuple[int, ...] = (1, input_edge, input_edge, input_edge)
    for layer, p in zip(params.layers, params.params):
        if p is not None:
            expected, _ = layer.param_shapes(shape)  # type: ignore[union-attr]
            if tuple(p.weight.shape) != tuple(expected):
                raise InvalidArgumentError(
                    f"network {params.describe()} cannot take a {input_edge}^3 grid"
                )
        shape = layer.output_shape(shape)
    if math.prod(shape) != params.num_classes:
        raise InvalidArgumentError(f"network output {shape} is not a class vector")
