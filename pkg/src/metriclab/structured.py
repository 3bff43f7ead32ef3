"""The structured pair metric: sign(1 - 2 * sum_i product(h_i(x), h_i(x'))).

A StructuredMetricNet bundles m trainable sub-networks h_i with two fixed
gadgets: a certified product approximator and the two-layer sign
approximator F_a.  Sub-network outputs are clamped to [-1, 2] (the region
where the product gadget is certified) before entering the product, and the
final output always lies in [-1, 1].

Exact symmetry: the product gadget canonicalizes its argument order, so
evaluate(x, x') and evaluate(x', x) are bit-identical.

Complexity accounting (documented here because the hand counts in the test
suite rely on it).  Realized as one monolithic ReLU network, the assembly
adds the following "glue" on top of the sub-network, product and sign
counts:
  * each of the 2m clamp streams costs two ReLU layers
    (u = relu(v + 1), w = relu(3 - u)): 2 units and 4 nonzero entries;
  * the clamp read-out (2 - w) folds into the product gadget's first layer
    and turns its 6 zero biases nonzero: +6 entries per product copy;
  * the aggregation t = 1 - 2 * sum(phi_i) folds into the sign net's first
    layer, widening its scalar fan-in (2 entries) to 2m: +(2m - 2) entries.
So with clamping on, c_W = 16m - 2 and c_U = 4m and the depth grows by 2;
with clamping off, c_W = 2m - 2 and c_U = 0.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputShapeError, ParameterError
from .gadgets import ProductGadget, SignApprox, build_product_gadget, build_sign_approx
from .relu_net import (
    DenseLayer,
    NetworkComplexity,
    ReluNetwork,
    complexity,
    load_model,
    save_model,
)
from .relu_net import _backprop, _forward_trace

CLAMP_LO, CLAMP_HI = -1.0, 2.0


@dataclass
class HypothesisBudget:
    L_max: int
    W_max: int
    U_max: int

    def admits(self, c: NetworkComplexity) -> bool:
        return c.depth <= self.L_max and c.nonzero_weights <= self.W_max and c.units <= self.U_max


@dataclass
class StructuredMetricNet:
    subnets: list[ReluNetwork]
    product: ProductGadget
    sign: SignApprox
    clamp_subnet_output: bool = True

    def __post_init__(self):
        if not self.subnets:
            raise ParameterError("need at least one sub-network")
        depths = {len(h.layers) for h in self.subnets}
        if len(depths) != 1:
            raise ParameterError(f"sub-networks must share one depth, got {sorted(depths)}")
        dims = {h.input_dim for h in self.subnets}
        if len(dims) != 1:
            raise ParameterError("sub-networks must share one input dimension")
        for h in self.subnets:
            if h.output_dim != 1:
                raise InputShapeError("sub-networks must be scalar-valued")
        if self.product.net.input_dim != 2 or self.product.net.output_dim != 1:
            raise InputShapeError("product gadget must map pairs to scalars")

    @property
    def m(self) -> int:
        return len(self.subnets)

    @property
    def input_dim(self) -> int:
        return self.subnets[0].input_dim

    def copy(self) -> "StructuredMetricNet":
        return StructuredMetricNet(
            [h.copy() for h in self.subnets], self.product, self.sign, self.clamp_subnet_output
        )


@dataclass
class PairTrace:
    """Everything the reverse pass needs, batched over pairs."""

    traces_x: list
    traces_xp: list
    raw_x: list
    raw_xp: list
    clamped_x: list
    clamped_xp: list
    swapped: list  # per subnet: True where (h(x), h(x')) was reordered
    phi_traces: list
    t_pre: np.ndarray
    sign_trace: list
    d: np.ndarray


def _check_domain(X, p: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p:
        raise InputShapeError(f"expected inputs of dimension {p}, got shape {X.shape}")
    if np.any(X < 0.0) or np.any(X > 1.0) or not np.isfinite(X).all():
        raise DomainError("pair inputs must lie in [0, 1]^p")
    return X


def pair_forward(net: StructuredMetricNet, X, Xp) -> PairTrace:
    X = _check_domain(X, net.input_dim)
    Xp = _check_domain(Xp, net.input_dim)
    if X.shape != Xp.shape:
        raise InputShapeError("pair batches must have matching shapes")

    traces_x, traces_xp = [], []
    raw_x, raw_xp, cl_x, cl_xp, swapped, phi_traces = [], [], [], [], [], []
    phi_sum = np.zeros(X.shape[0])
    for h in net.subnets:
        tx = _forward_trace(h, X)
        txp = _forward_trace(h, Xp)
        a = tx[-1][:, 0]
        b = txp[-1][:, 0]
        if net.clamp_subnet_output:
            ac = np.clip(a, CLAMP_LO, CLAMP_HI)
            bc = np.clip(b, CLAMP_LO, CLAMP_HI)
        else:
            ac, bc = a, b
        swap = ac > bc
        lo = np.where(swap, bc, ac)
        hi = np.where(swap, ac, bc)
        ptr = _forward_trace(net.product.net, np.column_stack([lo, hi]))
        phi_sum += ptr[-1][:, 0]
        traces_x.append(tx)
        traces_xp.append(txp)
        raw_x.append(a)
        raw_xp.append(b)
        cl_x.append(ac)
        cl_xp.append(bc)
        swapped.append(swap)
        phi_traces.append(ptr)

    t_pre = 1.0 - 2.0 * phi_sum
    sign_trace = _forward_trace(net.sign.net, t_pre[:, None])
    d = np.clip(sign_trace[-1][:, 0], -1.0, 1.0)
    return PairTrace(traces_x, traces_xp, raw_x, raw_xp, cl_x, cl_xp,
                     swapped, phi_traces, t_pre, sign_trace, d)


def pair_values(net: StructuredMetricNet, X, Xp) -> np.ndarray:
    """Batched metric values in [-1, 1]."""
    return pair_forward(net, X, Xp).d


def evaluate(net: StructuredMetricNet, x, xp) -> float:
    """Metric value for a single pair."""
    return float(pair_values(net, np.atleast_2d(x), np.atleast_2d(xp))[0])


def pair_backward(net: StructuredMetricNet, trace: PairTrace, upstream: np.ndarray):
    """Gradients of sum(upstream * d) w.r.t. sub-network parameters.

    Returns a list over sub-networks of (weight_grads, bias_grads), each
    summed over the batch and over both pair sides.  The product and sign
    gadgets are fixed; gradients flow through them but are not collected.
    """
    upstream = np.asarray(upstream, dtype=np.float64)[:, None]
    _, _, g_t = _backprop(net.sign.net, trace.sign_trace, upstream)
    grads = []
    for i, h in enumerate(net.subnets):
        g_phi = -2.0 * g_t  # t = 1 - 2 * sum_i phi_i
        _, _, g_pair = _backprop(net.product.net, trace.phi_traces[i], g_phi)
        g_lo, g_hi = g_pair[:, 0], g_pair[:, 1]
        swap = trace.swapped[i]
        g_a = np.where(swap, g_hi, g_lo)
        g_b = np.where(swap, g_lo, g_hi)
        if net.clamp_subnet_output:
            g_a = g_a * ((trace.raw_x[i] > CLAMP_LO) & (trace.raw_x[i] < CLAMP_HI))
            g_b = g_b * ((trace.raw_xp[i] > CLAMP_LO) & (trace.raw_xp[i] < CLAMP_HI))
        wx, bx, _ = _backprop(h, trace.traces_x[i], g_a[:, None])
        wxp, bxp, _ = _backprop(h, trace.traces_xp[i], g_b[:, None])
        grads.append(([gw + gwp for gw, gwp in zip(wx, wxp)],
                      [gb + gbp for gb, gbp in zip(bx, bxp)]))
    return grads


def glue_constants(net: StructuredMetricNet) -> dict:
    """The exact wiring cost added by the assembly (see module docstring)."""
    m = net.m
    if net.clamp_subnet_output:
        return {"c_W": 16 * m - 2, "c_U": 4 * m, "extra_depth": 2,
                "clamp_weights": 8 * m, "clamp_units": 4 * m,
                "product_bias_fill": 6 * m, "aggregation_fan_in": 2 * m - 2}
    return {"c_W": 2 * m - 2, "c_U": 0, "extra_depth": 0,
            "clamp_weights": 0, "clamp_units": 0,
            "product_bias_fill": 0, "aggregation_fan_in": 2 * m - 2}


def aggregate_complexity(net: StructuredMetricNet) -> NetworkComplexity:
    """Total (L, W, U) of the assembled metric network.

    L adds the shared sub-network depth, the clamp stage when present, and
    the product and sign depths; W and U charge every sub-network twice
    (both pair sides), the product gadget m times, the sign net once, and
    the exact glue constants.
    """
    sub = [complexity(h) for h in net.subnets]
    prod = complexity(net.product.net)
    sign = complexity(net.sign.net)
    glue = glue_constants(net)
    L = sub[0].depth + glue["extra_depth"] + prod.depth + sign.depth
    W = 2 * sum(c.nonzero_weights for c in sub) + net.m * prod.nonzero_weights \
        + sign.nonzero_weights + glue["c_W"]
    U = 2 * sum(c.units for c in sub) + net.m * prod.units + sign.units + glue["c_U"]
    return NetworkComplexity(L, W, U)


def pdim_bound(c: NetworkComplexity, scale_constant: float = 1.0) -> float:
    """Pseudo-dimension surrogate: scale * L * W * log2(U)."""
    if c.units < 2:
        raise ParameterError(f"pseudo-dimension bound needs U >= 2, got U={c.units}")
    return scale_constant * c.depth * c.nonzero_weights * math.log2(c.units)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def random_subnet(p: int, depth: int, width: int, rng: np.random.Generator,
                  init_scale: float = 1.0) -> ReluNetwork:
    """Sub-network with symmetric uniform init scaled by 1/sqrt(fan_in)."""
    if depth < 1 or width < 1:
        raise ParameterError("subnet depth and width must be >= 1")
    sizes = [p] + [width] * (depth - 1) + [1]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = init_scale / math.sqrt(fan_in)
        layers.append(DenseLayer(rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                                 rng.uniform(-bound, bound, size=fan_out)))
    return ReluNetwork(layers, input_dim=p, apply_final_relu=False)


def constant_subnet(p: int, value: float, depth: int = 1) -> ReluNetwork:
    """Sub-network that outputs a constant regardless of the input."""
    layers = [DenseLayer(np.zeros((1, p)), np.array([float(value)]))]
    for _ in range(depth - 1):
        layers.append(DenseLayer(np.array([[1.0]]), np.array([0.0])))
    return ReluNetwork(layers, input_dim=p, apply_final_relu=False)


def make_structured_net(p: int, m: int, depth: int, width: int, epsilon: float,
                        a: float, clamp: bool = True, seed: int = 0,
                        init_scale: float = 1.0,
                        product: ProductGadget | None = None,
                        sign: SignApprox | None = None) -> StructuredMetricNet:
    rng = np.random.default_rng(seed)
    subnets = [random_subnet(p, depth, width, rng, init_scale) for _ in range(m)]
    return StructuredMetricNet(
        subnets,
        product if product is not None else build_product_gadget(epsilon),
        sign if sign is not None else build_sign_approx(a),
        clamp_subnet_output=clamp,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_manifest(net: StructuredMetricNet, out_dir) -> str:
    """Write the composite as a manifest plus one model file per component."""
    os.makedirs(out_dir, exist_ok=True)
    subnet_files = []
    for i, h in enumerate(net.subnets):
        fname = f"subnet_{i}.json"
        save_model(h, os.path.join(out_dir, fname))
        subnet_files.append(fname)
    save_model(net.product.net, os.path.join(out_dir, "product.json"))
    save_model(net.sign.net, os.path.join(out_dir, "sign.json"))
    agg = aggregate_complexity(net)
    manifest = {
        "m": net.m,
        "a": net.sign.a,
        "epsilon": net.product.epsilon,
        "sawtooth_depth": net.product.sawtooth_depth,
        "certified_grid_error": net.product.certified_grid_error,
        "clamp_subnet_output": net.clamp_subnet_output,
        "aggregated_complexity": {"L": agg.depth, "W": agg.nonzero_weights, "U": agg.units},
        "glue_constants": glue_constants(net),
        "subnets": subnet_files,
        "product": "product.json",
        "sign": "sign.json",
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path


def load_manifest(out_dir) -> StructuredMetricNet:
    with open(os.path.join(out_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    subnets = [load_model(os.path.join(out_dir, f)) for f in manifest["subnets"]]
    product = ProductGadget(
        net=load_model(os.path.join(out_dir, manifest["product"])),
        epsilon=manifest["epsilon"],
        sawtooth_depth=manifest["sawtooth_depth"],
        certified_grid_error=manifest["certified_grid_error"],
    )
    sign_net = load_model(os.path.join(out_dir, manifest["sign"]))
    sign = SignApprox(manifest["a"], sign_net)
    return StructuredMetricNet(subnets, product, sign, manifest["clamp_subnet_output"])
