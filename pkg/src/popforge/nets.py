"""Dense multilayer perceptrons with explicit forward/backward passes.

Everything is float64 numpy. The backward pass can capture the per-layer
quantities (input activations, pre-activation gradients) that the curvature
estimators consume, which is why this is hand-rolled instead of delegated to
an autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        # subgradient 0 at z == 0
        return (z > 0.0).astype(np.float64)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Layer:
    """One dense layer: out = act(weight @ x + bias)."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2-d, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weight rows "
                f"{self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dim_in(self) -> int:
        return self.weight.shape[1]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[0]

    @property
    def num_params(self) -> int:
        return self.weight.size + self.bias.size

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class NetworkParams:
    """An MLP as an ordered list of dense layers with chained dimensions."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.dim_out != nxt.dim_in:
                raise ValueError(
                    f"layer dims do not chain: {prev.dim_out} -> {nxt.dim_in}"
                )

    @property
    def dim_in(self) -> int:
        return self.layers[0].dim_in

    @property
    def dim_out(self) -> int:
        return self.layers[-1].dim_out

    @property
    def num_params(self) -> int:
        return sum(layer.num_params for layer in self.layers)

    def copy(self) -> "NetworkParams":
        return NetworkParams([layer.copy() for layer in self.layers])


@dataclass
class BackwardCapture:
    """Per-layer quantities recorded by a backward pass.

    ``activations[i]`` is the input to layer i (batch, in); ``preact_grads[i]``
    is the per-sample gradient of the sample loss at layer i's pre-activation
    (batch, out), without the 1/batch factor.  ``grad`` is the flat gradient of
    the batch-mean loss, so for every layer

        d(mean loss)/dW_i == preact_grads[i].T @ activations[i] / batch
    """

    grad: np.ndarray
    activations: list[np.ndarray]
    preact_grads: list[np.ndarray]
    input_grads: np.ndarray  # (batch, dim_in), per-sample, no 1/batch


def init_mlp(
    dims: list[int], activations: list[str], rng: np.random.Generator
) -> NetworkParams:
    """Build an MLP with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        bound = 1.0 / np.sqrt(dims[i])
        weight = rng.uniform(-bound, bound, size=(dims[i + 1], dims[i]))
        bias = rng.uniform(-bound, bound, size=dims[i + 1])
        layers.append(Layer(weight, bias, act))
    return NetworkParams(layers)


def _check_inputs(net: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.ndim != 2 or inputs.shape[1] != net.dim_in:
        raise ValueError(
            f"inputs shape {inputs.shape} incompatible with network input dim "
            f"{net.dim_in}"
        )
    return inputs


def forward(net: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Run the network on a (batch, dim_in) matrix. Pure; returns (batch, dim_out)."""
    out, _ = forward_trace(net, inputs)
    return out


def forward_trace(
    net: NetworkParams, inputs: np.ndarray
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass that also returns per-layer (input, pre-activation) pairs."""
    a = _check_inputs(net, inputs)
    trace = []
    for layer in net.layers:
        z = a @ layer.weight.T + layer.bias
        trace.append((a, z))
        a = _act(layer.activation, z)
    return a, trace


def backward(
    net: NetworkParams,
    inputs: np.ndarray,
    loss_grad: np.ndarray,
    capture: bool = False,
) -> BackwardCapture:
    """Backpropagate per-sample output cotangents through the network.

    ``loss_grad`` holds d(sample loss)/d(output) per row; the returned flat
    gradient is for the batch-mean loss.  With ``capture`` the per-layer
    activation/pre-activation-gradient pairs are kept for curvature use.
    """
    inputs = _check_inputs(net, inputs)
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.ndim == 1:
        loss_grad = loss_grad[None, :]
    if loss_grad.shape != (inputs.shape[0], net.dim_out):
        raise ValueError(
            f"loss_grad shape {loss_grad.shape} does not match "
            f"(batch={inputs.shape[0]}, dim_out={net.dim_out})"
        )

    _, trace = forward_trace(net, inputs)
    batch = inputs.shape[0]
    n_layers = len(net.layers)
    weight_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    preact_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]

    delta = loss_grad
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        a, z = trace[i]
        delta = delta * _act_deriv(layer.activation, z)
        weight_grads[i] = delta.T @ a / batch
        bias_grads[i] = delta.mean(axis=0)
        if capture:
            preact_grads[i] = delta
        delta = delta @ layer.weight

    flat = np.concatenate(
        [np.concatenate([w.ravel(), b]) for w, b in zip(weight_grads, bias_grads)]
    )
    return BackwardCapture(
        grad=flat,
        activations=[trace[i][0] for i in range(n_layers)] if capture else [],
        preact_grads=preact_grads if capture else [],
        input_grads=delta,
    )


def flatten(net: NetworkParams) -> np.ndarray:
    """Flat parameter vector: layer-major, weight row-major, then bias."""
    return np.concatenate(
        [np.concatenate([layer.weight.ravel(), layer.bias]) for layer in net.layers]
    )


def unflatten(template: NetworkParams, vec: np.ndarray) -> NetworkParams:
    """Rebuild a network with ``template``'s shapes from a flat vector."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (template.num_params,):
        raise ValueError(
            f"flat vector length {vec.shape} does not match parameter count "
            f"{template.num_params}"
        )
    layers = []
    offset = 0
    for layer in template.layers:
        w_size = layer.weight.size
        weight = vec[offset : offset + w_size].reshape(layer.weight.shape).copy()
        offset += w_size
        bias = vec[offset : offset + layer.dim_out].copy()
        offset += layer.dim_out
        layers.append(Layer(weight, bias, layer.activation))
    return NetworkParams(layers)


def layer_slices(net: NetworkParams) -> list[tuple[slice, slice]]:
    """(weight slice, bias slice) into the flat vector, per layer."""
    slices = []
    offset = 0
    for layer in net.layers:
        w = slice(offset, offset + layer.weight.size)
        offset += layer.weight.size
        b = slice(offset, offset + layer.dim_out)
        offset += layer.dim_out
        slices.append((w, b))
    return slices
