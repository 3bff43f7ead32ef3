"""Constructive ReLU gadgets: sawtooth, squaring, product and sign networks.

The product network realizes the polarization identity
    x*y = 2*M^2 * ( sq(|x+y|/2M) - sq(|x|/2M) - sq(|y|/2M) ),  M = 2,
where sq is the sawtooth-based squaring approximant
    sq_s(u) = u - sum_{k=1..s} g_k(u) / 2^(2k)   on [0, 1],
and g_k is the k-fold composition of the hat g(u) = 2s(u) - 4s(u-1/2) + 2s(u-1)
(s = ReLU).  With M = 2 every squaring input stays in [0, 1] on the working
square [-1, 2]^2, |sq_s - u^2| <= 2^(-2s-2), and the three-term combination
is exactly zero whenever x = 0 or y = 0 because the two nonzero branches
cancel bit-for-bit.  All constant coefficients are exact binary fractions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificationError, ParameterError
from .relu_net import DenseLayer, NetworkComplexity, ReluNetwork, complexity, forward

PRODUCT_DOMAIN = (-1.0, 2.0)
CERT_GRID_POINTS = 401
AXIS_ZERO_TOL = 1e-12
_M = 2.0  # rescale factor: squaring inputs are |.| / (2M) with M = 2


def eval_scalar(net: ReluNetwork, t):
    """Evaluate a 1-input/1-output network on a scalar or 1-D array."""
    arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = forward(net, arr.reshape(-1, 1))[:, 0]
    return float(out[0]) if np.isscalar(t) or np.asarray(t).ndim == 0 else out


def _hat_entry_layer() -> DenseLayer:
    # units: s(v), s(v - 1/2), s(v - 1) on a scalar input
    return DenseLayer(np.array([[1.0], [1.0], [1.0]]), np.array([0.0, -0.5, -1.0]))


def _hat_chain_layer() -> DenseLayer:
    # previous hat triple -> next hat triple, v = 2u1 - 4u2 + 2u3
    row = np.array([2.0, -4.0, 2.0])
    return DenseLayer(np.vstack([row, row, row]), np.array([0.0, -0.5, -1.0]))


def build_hat_iterate(s: int) -> ReluNetwork:
    """s-fold composition of the hat function as a ReLU network on [0, 1].

    The result has s hat stages plus a scalar affine read-out; g_s has
    2^(s-1) teeth of height 1.
    """
    if s < 1:
        raise ParameterError(f"hat iterate needs s >= 1, got {s}")
    layers = [_hat_entry_layer()]
    layers += [_hat_chain_layer() for _ in range(s - 1)]
    layers.append(DenseLayer(np.array([[2.0, -4.0, 2.0]]), np.array([0.0])))
    return ReluNetwork(layers, input_dim=1, apply_final_relu=False)


def _square_entry_layer() -> DenseLayer:
    # hat triple for stage 1 plus a carry unit holding A_0 = u (u >= 0 on [0,1])
    return DenseLayer(
        np.array([[1.0], [1.0], [1.0], [1.0]]),
        np.array([0.0, -0.5, -1.0, 0.0]),
    )


def _square_stage_layer(stage: int) -> DenseLayer:
    """Stage >= 2: next hat triple plus carry A_{l-1} = A_{l-2} - g_{l-1}/4^(l-1)."""
    c = 4.0 ** -(stage - 1)
    w = np.array(
        [
            [2.0, -4.0, 2.0, 0.0],
            [2.0, -4.0, 2.0, 0.0],
            [2.0, -4.0, 2.0, 0.0],
            [-2.0 * c, 4.0 * c, -2.0 * c, 1.0],
        ]
    )
    return DenseLayer(w, np.array([0.0, -0.5, -1.0, 0.0]))


def _square_readout_row(s: int) -> np.ndarray:
    # sq_s = A_{s-1} - g_s/4^s, from the final (hat triple, carry) block
    c = 4.0 ** -s
    return np.array([-2.0 * c, 4.0 * c, -2.0 * c, 1.0])


def build_square_gadget(s: int) -> ReluNetwork:
    """Squaring approximant on [0, 1]: |sq_s(u) - u^2| <= 2^(-2s-2),
    with sq_s(0) = 0 and sq_s(1) = 1 exactly."""
    if s < 1:
        raise ParameterError(f"square gadget needs s >= 1, got {s}")
    layers = [_square_entry_layer()]
    layers += [_square_stage_layer(l) for l in range(2, s + 1)]
    layers.append(DenseLayer(_square_readout_row(s)[None, :], np.array([0.0])))
    return ReluNetwork(layers, input_dim=1, apply_final_relu=False)


@dataclass
class ProductGadget:
    """Certified product approximator on [-1, 2]^2.

    Calls canonicalize the argument order (the construction is symmetric in
    exact arithmetic) so phi(x, y) and phi(y, x) are bit-identical.
    """

    net: ReluNetwork
    epsilon: float
    sawtooth_depth: int
    certified_grid_error: float
    domain: tuple = PRODUCT_DOMAIN
    metadata: dict = field(default_factory=dict)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        scalar = x.ndim == 0 and y.ndim == 0
        x, y = np.atleast_1d(x), np.atleast_1d(y)
        lo = np.minimum(x, y)
        hi = np.maximum(x, y)
        out = forward(self.net, np.column_stack([lo, hi]))[:, 0]
        return float(out[0]) if scalar else out

    @property
    def complexity(self) -> NetworkComplexity:
        return complexity(self.net)


def sawtooth_depth_for(epsilon: float) -> int:
    """Smallest s with 3 * 2M^2 * 2^(-2s-2) folded under epsilon (safety 2x)."""
    return max(1, math.ceil((math.log2(48.0 / epsilon) - 2.0) / 2.0))


def _product_net(s: int) -> ReluNetwork:
    q = 0.25  # 1 / (2M)
    abs_layer = DenseLayer(
        np.array(
            [
                [q, q],
                [-q, -q],
                [q, 0.0],
                [-q, 0.0],
                [0.0, q],
                [0.0, -q],
            ]
        ),
        np.zeros(6),
    )
    # first squaring stage per branch; branch j reads abs units 2j and 2j+1
    w = np.zeros((12, 6))
    b = np.zeros(12)
    for j in range(3):
        for r, bias in enumerate((0.0, -0.5, -1.0, 0.0)):
            w[4 * j + r, 2 * j] = 1.0
            w[4 * j + r, 2 * j + 1] = 1.0
            b[4 * j + r] = bias
    first_sq = DenseLayer(w, b)

    stages = []
    for stage in range(2, s + 1):
        block = _square_stage_layer(stage)
        wl = np.zeros((12, 12))
        bl = np.zeros(12)
        for j in range(3):
            wl[4 * j : 4 * j + 4, 4 * j : 4 * j + 4] = block.weights
            bl[4 * j : 4 * j + 4] = block.bias
        stages.append(DenseLayer(wl, bl))

    row = _square_readout_row(s)
    scale = 2.0 * _M * _M
    readout = np.concatenate([scale * row, -scale * row, -scale * row])[None, :]
    layers = [abs_layer, first_sq, *stages, DenseLayer(readout, np.array([0.0]))]
    return ReluNetwork(layers, input_dim=2, apply_final_relu=False)


def certification_grid(n: int = CERT_GRID_POINTS) -> np.ndarray:
    return np.linspace(PRODUCT_DOMAIN[0], PRODUCT_DOMAIN[1], n)


def build_product_gadget(epsilon: float) -> ProductGadget:
    """Build and certify phi with sup-grid error <= epsilon on [-1, 2]^2."""
    if not (0.0 < epsilon < 0.5):
        raise ParameterError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    s = sawtooth_depth_for(epsilon)
    net = _product_net(s)
    gadget = ProductGadget(net, epsilon, s, certified_grid_error=np.nan)

    g = certification_grid()
    xx, yy = np.meshgrid(g, g, indexing="ij")
    approx = gadget(xx.ravel(), yy.ravel())
    err = float(np.max(np.abs(approx - xx.ravel() * yy.ravel())))
    if err > epsilon:
        raise CertificationError(
            f"product gadget failed certification: grid error {err:.3e} > {epsilon:.3e}"
        )
    zeros = np.zeros_like(g)
    axis_err = max(
        float(np.max(np.abs(gadget(g, zeros)))),
        float(np.max(np.abs(gadget(zeros, g)))),
    )
    if axis_err > AXIS_ZERO_TOL:
        raise CertificationError(f"zero-on-axes violated: |phi| up to {axis_err:.3e}")

    gadget.certified_grid_error = err
    comp = complexity(net)
    log_inv_eps = math.log(1.0 / epsilon)
    gadget.metadata = {
        "epsilon": epsilon,
        "sawtooth_depth": s,
        "certified_grid_error": err,
        "axis_error": axis_err,
        "complexity": {"L": comp.depth, "W": comp.nonzero_weights, "U": comp.units},
        "log_law_constants": {
            "depth": comp.depth / log_inv_eps,
            "weights": comp.nonzero_weights / log_inv_eps,
            "units": comp.units / log_inv_eps,
        },
    }
    gadget.net.metadata = dict(gadget.metadata)
    return gadget


@dataclass
class SignApprox:
    """Two-layer ReLU realization of F_a: sign outside [-a, a], t/a inside."""

    a: float
    net: ReluNetwork

    def __call__(self, t):
        raw = eval_scalar(self.net, t)
        # the exact F_a never leaves [-1, 1]; clip removes float overshoot only
        return np.clip(raw, -1.0, 1.0) if isinstance(raw, np.ndarray) else min(1.0, max(-1.0, raw))

    @property
    def complexity(self) -> NetworkComplexity:
        return complexity(self.net)


def build_sign_approx(a: float) -> SignApprox:
    if not a > 0.0:
        raise ParameterError(f"sign approximator needs a > 0, got {a}")
    layers = [
        DenseLayer(np.array([[1.0], [1.0]]), np.array([a, -a])),
        DenseLayer(np.array([[1.0 / a, -1.0 / a]]), np.array([-1.0])),
    ]
    net = ReluNetwork(layers, input_dim=1, apply_final_relu=False, metadata={"a": a})
    return SignApprox(a, net)
