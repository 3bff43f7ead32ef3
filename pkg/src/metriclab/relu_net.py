"""Dense feedforward ReLU networks with exact complexity accounting.

A network is an ordered list of dense layers.  ReLU is applied after every
layer; on the last layer it is applied only when ``apply_final_relu`` is
set, because several constructions here end in an affine read-out (absolute
value, product and sign gadgets all combine ReLU units affinely).

Complexity conventions, used everywhere downstream:
  L = number of layers,
  W = number of nonzero stored weight and bias entries,
  U = total number of computation units (sum of layer output widths).
Exact zeros stored in a matrix do not count toward W.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputShapeError, ParameterError

MODEL_FORMAT_VERSION = 1


@dataclass
class DenseLayer:
    """One affine map: weights (out_width x in_width) and bias (out_width)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise InputShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weights.shape[0]:
            raise InputShapeError(
                f"bias shape {self.bias.shape} inconsistent with weights {self.weights.shape}"
            )
        if self.out_width < 1 or self.in_width < 1:
            raise InputShapeError("layer widths must be >= 1")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise DomainError("layer parameters must be finite")

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy())


@dataclass(frozen=True)
class NetworkComplexity:
    """(L, W, U) triple: depth, nonzero weights, computation units."""

    depth: int
    nonzero_weights: int
    units: int

    def __post_init__(self):
        if min(self.depth, self.nonzero_weights, self.units) < 0:
            raise ParameterError("complexity components must be nonnegative")
        if self.units < self.depth:
            raise ParameterError("units < depth impossible (each layer has width >= 1)")

    def __add__(self, other: "NetworkComplexity") -> "NetworkComplexity":
        return NetworkComplexity(
            self.depth + other.depth,
            self.nonzero_weights + other.nonzero_weights,
            self.units + other.units,
        )


@dataclass
class ReluNetwork:
    """Feedforward ReLU network; immutable by convention after construction."""

    layers: list[DenseLayer]
    input_dim: int
    apply_final_relu: bool = True
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise InputShapeError("network needs at least one layer")
        width = self.input_dim
        for k, layer in enumerate(self.layers):
            if layer.in_width != width:
                raise InputShapeError(
                    f"layer {k} expects input width {layer.in_width}, chain provides {width}"
                )
            width = layer.out_width

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_width

    def copy(self) -> "ReluNetwork":
        return ReluNetwork(
            [layer.copy() for layer in self.layers],
            self.input_dim,
            self.apply_final_relu,
            dict(self.metadata),
        )

    def __call__(self, x):
        return forward(self, x)


@dataclass
class GradientRecord:
    """Reverse-mode derivatives of forward() w.r.t. parameters and input."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray


def _as_batch(x, dim: int, what: str = "input"):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputShapeError(f"{what} must have dimension {dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DomainError(f"{what} contains non-finite entries")
    return x, squeeze


def forward(net: ReluNetwork, x):
    """Evaluate the network; accepts a vector or a (batch, input_dim) array."""
    xb, squeeze = _as_batch(x, net.input_dim)
    out = _forward_trace(net, xb)[-1]
    return out[0] if squeeze else out


def _forward_trace(net: ReluNetwork, xb: np.ndarray) -> list[np.ndarray]:
    """Post-activation values per layer, index 0 being the input batch."""
    acts = [xb]
    h = xb
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        z = h @ layer.weights.T + layer.bias
        if k < last or net.apply_final_relu:
            z = np.maximum(z, 0.0)
        acts.append(z)
        h = z
    return acts


def backward(net: ReluNetwork, x, upstream) -> GradientRecord:
    """Reverse-mode gradients with the subgradient convention sigma'(0) = 0.

    ``upstream`` is d(objective)/d(output); batched inputs get batched
    upstreams and the parameter gradients are summed over the batch.
    """
    xb, squeeze = _as_batch(x, net.input_dim)
    ub, usq = _as_batch(upstream, net.output_dim, "upstream")
    if squeeze != usq or xb.shape[0] != ub.shape[0]:
        raise InputShapeError("input and upstream batch shapes disagree")
    acts = _forward_trace(net, xb)
    wgrads, bgrads, ginput = _backprop(net, acts, ub)
    return GradientRecord(wgrads, bgrads, ginput[0] if squeeze else ginput)


def _backprop(net: ReluNetwork, acts: list[np.ndarray], upstream: np.ndarray):
    """Core reverse pass over a stored trace; upstream shape (batch, out)."""
    g = upstream
    wgrads: list = [None] * len(net.layers)
    bgrads: list = [None] * len(net.layers)
    last = len(net.layers) - 1
    for k in range(last, -1, -1):
        layer = net.layers[k]
        post = acts[k + 1]
        if k < last or net.apply_final_relu:
            g = g * (post > 0.0)  # sigma'(0) := 0
        wgrads[k] = g.T @ acts[k]
        bgrads[k] = g.sum(axis=0)
        g = g @ layer.weights
    return wgrads, bgrads, g


def complexity(net: ReluNetwork) -> NetworkComplexity:
    """Exact (L, W, U); stored zeros never count toward W."""
    depth = len(net.layers)
    nnz = sum(
        int(np.count_nonzero(layer.weights)) + int(np.count_nonzero(layer.bias))
        for layer in net.layers
    )
    units = sum(layer.out_width for layer in net.layers)
    return NetworkComplexity(depth, nnz, units)


def stack(first: ReluNetwork, second: ReluNetwork) -> ReluNetwork:
    """Concatenate two networks; complexity is additive under stacking."""
    if second.input_dim != first.output_dim:
        raise InputShapeError(
            f"cannot stack: first outputs {first.output_dim}, second expects {second.input_dim}"
        )
    if not first.apply_final_relu:
        # the seam would silently lose the affine read-out semantics
        raise ParameterError("first network must end in ReLU to stack")
    return ReluNetwork(
        [l.copy() for l in first.layers] + [l.copy() for l in second.layers],
        first.input_dim,
        second.apply_final_relu,
    )


def save_model(net: ReluNetwork, path) -> None:
    """Write the versioned model file (JSON; floats at full repr precision)."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "input_dim": net.input_dim,
        "apply_final_relu": net.apply_final_relu,
        "metadata": net.metadata,
        "layers": [
            {
                "out_width": layer.out_width,
                "in_width": layer.in_width,
                "weights_row_major": [float(v) for v in layer.weights.ravel(order="C")],
                "bias": [float(v) for v in layer.bias],
            }
            for layer in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> ReluNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ParameterError(f"unsupported model format version {doc.get('format_version')!r}")
    layers = []
    for spec in doc["layers"]:
        w = np.array(spec["weights_row_major"], dtype=np.float64).reshape(
            spec["out_width"], spec["in_width"]
        )
        layers.append(DenseLayer(w, np.array(spec["bias"], dtype=np.float64)))
    return ReluNetwork(layers, doc["input_dim"], doc["apply_final_relu"], doc.get("metadata", {}))
