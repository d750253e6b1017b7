"""Shared test oracles: independent re-implementations used to check the
library's fast paths. These stay loop-based and simple on purpose."""

from __future__ import annotations

import math

import numpy as np

from popforge import nets


def reference_forward(net: nets.NetworkParams, x_row) -> list[float]:
    """Scalar-loop forward pass, independent of the vectorized implementation."""
    a = [float(v) for v in x_row]
    for layer in net.layers:
        z = []
        for i in range(layer.dim_out):
            s = float(layer.bias[i])
            for j in range(layer.dim_in):
                s += float(layer.weight[i, j]) * a[j]
            z.append(s)
        if layer.activation == "tanh":
            a = [math.tanh(v) for v in z]
        elif layer.activation == "relu":
            a = [max(v, 0.0) for v in z]
        else:
            a = z
    return a


def mse_loss(net: nets.NetworkParams, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Batch mean of the per-sample mean-over-outputs squared error."""
    outputs = nets.forward(net, inputs)
    return float(np.mean(np.mean((outputs - targets) ** 2, axis=1)))


def fd_gradient(
    net: nets.NetworkParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    h: float = 1e-5,
) -> np.ndarray:
    """Central finite differences of the MSE loss on every coordinate."""
    theta = nets.flatten(net)
    grad = np.zeros_like(theta)
    for d in range(theta.size):
        plus = theta.copy()
        plus[d] += h
        minus = theta.copy()
        minus[d] -= h
        grad[d] = (
            mse_loss(nets.unflatten(net, plus), inputs, targets)
            - mse_loss(nets.unflatten(net, minus), inputs, targets)
        ) / (2.0 * h)
    return grad


def forward_mode_jacobian(net: nets.NetworkParams, x_row: np.ndarray) -> np.ndarray:
    """Per-sample Jacobian d output / d theta, one forward-mode pass per column."""
    dim = net.num_params
    jac = np.zeros((net.dim_out, dim))
    slices = nets.layer_slices(net)
    for d in range(dim):
        a = np.asarray(x_row, dtype=float)
        da = np.zeros_like(a)
        for li, layer in enumerate(net.layers):
            w_slice, b_slice = slices[li]
            dw = np.zeros_like(layer.weight)
            db = np.zeros(layer.dim_out)
            if w_slice.start <= d < w_slice.stop:
                flat = np.zeros(layer.weight.size)
                flat[d - w_slice.start] = 1.0
                dw = flat.reshape(layer.weight.shape)
            elif b_slice.start <= d < b_slice.stop:
                db[d - b_slice.start] = 1.0
            z = layer.weight @ a + layer.bias
            dz = dw @ a + layer.weight @ da + db
            if layer.activation == "tanh":
                a = np.tanh(z)
                da = (1.0 - a * a) * dz
            elif layer.activation == "relu":
                a = np.maximum(z, 0.0)
                da = (z > 0.0) * dz
            else:
                a = z
                da = dz
        jac[:, d] = da
    return jac


def dense_ggn_diag(net: nets.NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Diagonal of the batch-mean J^T H_f J with H_f = (2/C) I, via the
    forward-mode Jacobian oracle."""
    inputs = np.atleast_2d(inputs)
    scale = 2.0 / net.dim_out
    total = np.zeros(net.num_params)
    for row in inputs:
        jac = forward_mode_jacobian(net, row)
        total += scale * np.sum(jac * jac, axis=0)
    return total / inputs.shape[0]


def random_net(
    rng: np.random.Generator,
    dims: list[int] | None = None,
    activations: list[str] | None = None,
) -> nets.NetworkParams:
    if dims is None:
        n_layers = int(rng.integers(1, 4))
        dims = [int(rng.integers(1, 4)) for _ in range(n_layers + 1)]
    if activations is None:
        activations = [
            str(rng.choice(["tanh", "identity"])) for _ in range(len(dims) - 2)
        ] + ["identity"]
    return nets.init_mlp(dims, activations, rng)
