"""Curvature estimates and damped inverse application.

Two estimators over :class:`~popforge.nets.BackwardCapture` data:

* exact diagonal of the batch-averaged Gauss-Newton matrix for MSE heads,
* per-layer Kronecker factor pairs (input-activation and pre-activation-
  gradient second moments) with an exponential moving average.

Plus the two ways those estimates get applied to a gradient: an elementwise
damped Newton step for diagonals, and a factor-wise Cholesky solve for the
Kronecker blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .nets import BackwardCapture, NetworkParams, _act_deriv, forward_trace


class CholeskyFailure(RuntimeError):
    """A Kronecker factor was not positive-definite under the given damping."""

    def __init__(self, layer: int, factor: str, message: str = ""):
        self.layer = layer
        self.factor = factor
        detail = f": {message}" if message else ""
        super().__init__(
            f"Cholesky factorization failed for factor {factor} of layer "
            f"{layer}{detail}"
        )


class UnsupportedLossError(ValueError):
    """Raised when a curvature estimator does not support the loss kind."""


@dataclass
class DiagCurvature:
    """Diagonal curvature estimate; entries are nonnegative."""

    diag: np.ndarray

    def __post_init__(self) -> None:
        self.diag = np.asarray(self.diag, dtype=np.float64)


@dataclass
class KroneckerBlocks:
    """Per-layer Kronecker factor pairs.

    ``a_factors[i]`` is (in+1, in+1) over bias-augmented input activations,
    ``b_factors[i]`` is (out, out) over pre-activation gradients.  Both are
    symmetric PSD averages over the batch (and over time when ``decay`` > 0).
    """

    a_factors: list[np.ndarray]
    b_factors: list[np.ndarray]
    decay: float = 0.95

    def __post_init__(self) -> None:
        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"decay must be in [0, 1), got {self.decay}")
        if len(self.a_factors) != len(self.b_factors):
            raise ValueError("factor lists must have equal length")

    @classmethod
    def identity_like(cls, net: NetworkParams, decay: float = 0.95) -> "KroneckerBlocks":
        return cls(
            a_factors=[np.eye(layer.dim_in + 1) for layer in net.layers],
            b_factors=[np.eye(layer.dim_out) for layer in net.layers],
            decay=decay,
        )

    def copy(self) -> "KroneckerBlocks":
        return KroneckerBlocks(
            [a.copy() for a in self.a_factors],
            [b.copy() for b in self.b_factors],
            self.decay,
        )


def diag_ggn(
    net: NetworkParams, inputs: np.ndarray, loss_kind: str = "mse"
) -> DiagCurvature:
    """Exact diagonal of the batch-mean Gauss-Newton matrix.

    The loss is the per-sample mean over the C outputs of the squared error,
    so the output-space Hessian is (2/C)*I and the result is target-free.
    Per-sample output/pre-activation Jacobians are propagated backward layer
    by layer; only their squared column sums are needed for the diagonal.
    """
    if loss_kind != "mse":
        raise UnsupportedLossError(f"unsupported loss kind {loss_kind!r}")
    _, trace = forward_trace(net, inputs)
    batch = trace[0][0].shape[0]
    if batch == 0:
        raise ValueError("batch must be non-empty")
    n_out = net.dim_out
    hess_scale = 2.0 / n_out

    # jac[n, c, k] = d output_c / d preactivation_k of the current layer
    pieces: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    jac = None
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a, z = trace[i]
        deriv = _act_deriv(layer.activation, z)  # (batch, out)
        if jac is None:
            jac = np.eye(n_out)[None, :, :] * deriv[:, None, :]
        else:
            jac = jac * deriv[:, None, :]
        q = np.einsum("nck,nck->nk", jac, jac)  # (batch, out)
        a_sq = a * a
        w_diag = hess_scale * (q.T @ a_sq) / batch  # (out, in)
        b_diag = hess_scale * q.mean(axis=0)
        pieces[i] = np.concatenate([w_diag.ravel(), b_diag])
        if i > 0:
            jac = jac @ layer.weight  # (batch, C, in)
    return DiagCurvature(np.concatenate(pieces))


def empirical_fisher_diag(capture: BackwardCapture) -> DiagCurvature:
    """Diagonal of the empirical Fisher: batch mean of squared per-sample grads.

    Used where no PSD Gauss-Newton exists for the loss (the deterministic
    actor objective routed through an external critic).
    """
    if not capture.activations:
        raise ValueError("capture must be populated (backward with capture=True)")
    pieces = []
    for a, b in zip(capture.activations, capture.preact_grads):
        batch = a.shape[0]
        a_sq = a * a
        b_sq = b * b
        w_diag = (b_sq.T @ a_sq) / batch
        b_diag = b_sq.mean(axis=0)
        pieces.append(np.concatenate([w_diag.ravel(), b_diag]))
    return DiagCurvature(np.concatenate(pieces))


def kfac_factors(
    capture: BackwardCapture,
    prior: KroneckerBlocks | None = None,
    decay: float = 0.95,
) -> KroneckerBlocks:
    """Kronecker factor statistics from a captured backward pass.

    A_i averages outer products of bias-augmented input activations, B_i of
    per-sample pre-activation gradients.  With a prior the update is the
    exponential moving average decay*prior + (1-decay)*fresh.
    """
    if not capture.activations:
        raise ValueError("capture must be populated (backward with capture=True)")
    a_factors = []
    b_factors = []
    for a, b in zip(capture.activations, capture.preact_grads):
        batch = a.shape[0]
        a_aug = np.concatenate([a, np.ones((batch, 1))], axis=1)
        a_factors.append(a_aug.T @ a_aug / batch)
        b_factors.append(b.T @ b / batch)
    fresh = KroneckerBlocks(a_factors, b_factors, decay)
    if prior is None:
        return fresh
    if len(prior.a_factors) != len(fresh.a_factors):
        raise ValueError("prior has a different number of layers")
    return KroneckerBlocks(
        [decay * pa + (1.0 - decay) * fa for pa, fa in zip(prior.a_factors, a_factors)],
        [decay * pb + (1.0 - decay) * fb for pb, fb in zip(prior.b_factors, b_factors)],
        decay,
    )


def kron_precondition(
    blocks: KroneckerBlocks, delta: float, grad: np.ndarray
) -> np.ndarray:
    """Apply the damped inverse Kronecker blocks to a flat gradient.

    Each layer's gradient slice is reshaped to [dW | db] of shape
    (out, in+1) and replaced by

        (B_i + sqrt(delta) I)^-1 @ G @ (A_i + sqrt(delta) I)^-1

    so the product of the two damped factors approximates damping the full
    block by delta*I while keeping the inverse factor-wise.  Inverses go
    through Cholesky; a non-positive-definite factor raises
    :class:`CholeskyFailure` naming the layer.
    """
    if delta < 0.0:
        raise ValueError(f"damping must be >= 0, got {delta}")
    grad = np.asarray(grad, dtype=np.float64)
    root = np.sqrt(delta)
    out_pieces = []
    offset = 0
    for i, (a_fac, b_fac) in enumerate(zip(blocks.a_factors, blocks.b_factors)):
        n_in = a_fac.shape[0] - 1
        n_out = b_fac.shape[0]
        w_size = n_out * n_in
        g_w = grad[offset : offset + w_size].reshape(n_out, n_in)
        g_b = grad[offset + w_size : offset + w_size + n_out]
        offset += w_size + n_out
        g_mat = np.concatenate([g_w, g_b[:, None]], axis=1)  # (out, in+1)

        try:
            b_chol = cho_factor(b_fac + root * np.eye(n_out), lower=True)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure(i, "B", str(exc)) from exc
        try:
            a_chol = cho_factor(a_fac + root * np.eye(n_in + 1), lower=True)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure(i, "A", str(exc)) from exc

        left = cho_solve(b_chol, g_mat)  # B^-1 G
        full = cho_solve(a_chol, left.T).T  # B^-1 G A^-1 (A symmetric)
        out_pieces.append(np.concatenate([full[:, :n_in].ravel(), full[:, n_in]]))
    if offset != grad.shape[0]:
        raise ValueError(
            f"gradient length {grad.shape[0]} does not match blocks ({offset})"
        )
    return np.concatenate(out_pieces)


def damped_newton_step(
    curv: DiagCurvature, grad: np.ndarray, delta: float, alpha: float
) -> np.ndarray:
    """Parameter delta -alpha * (diag + delta)^-1 * grad, elementwise.

    Coordinates where diag + delta == 0 get a zero step instead of a division
    by zero; shipped configurations keep delta > 0 so this is a guard only.
    """
    if delta < 0.0:
        raise ValueError(f"damping must be >= 0, got {delta}")
    grad = np.asarray(grad, dtype=np.float64)
    denom = curv.diag + delta
    step = np.zeros_like(grad)
    nonzero = denom != 0.0
    step[nonzero] = -alpha * grad[nonzero] / denom[nonzero]
    return step
