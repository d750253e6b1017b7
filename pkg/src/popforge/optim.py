"""Stateful per-network optimizer steppers and hyperparameter handling.

Three optimizer kinds share one stepping interface: Adam, a damped diagonal
Gauss-Newton stepper, and a Kronecker-factored stepper.  An agent's kind is
fixed for its lifetime; population transfers swap weights and hyperparameters
but never the kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import nets
from .curvature import (
    DiagCurvature,
    KroneckerBlocks,
    damped_newton_step,
    diag_ggn,
    empirical_fisher_diag,
    kfac_factors,
    kron_precondition,
)
from .nets import BackwardCapture, NetworkParams

KFAC_MIN_DAMPING = 1.0  # factorizations reliably fail below this


class OptimizerKind(Enum):
    ADAM = "adam"
    DIAG_GGN = "diag_ggn"
    KFAC = "kfac"

    @classmethod
    def parse(cls, text: str) -> "OptimizerKind":
        key = text.strip().lower().replace("-", "_")
        aliases = {
            "adam": cls.ADAM,
            "diag_ggn": cls.DIAG_GGN,
            "diagggn": cls.DIAG_GGN,
            "ggn": cls.DIAG_GGN,
            "kfac": cls.KFAC,
            "k_fac": cls.KFAC,
        }
        if key not in aliases:
            raise ValueError(f"unknown optimizer kind {text!r}")
        return aliases[key]

    def __str__(self) -> str:
        return self.value


@dataclass
class AdamState:
    """First/second gradient moments plus the bias-correction step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim))


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One Adam update with bias correction. Pure: returns new arrays."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params, grad and moment shapes must agree")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


@dataclass
class HyperparamSet:
    """Per-agent tunables. ``damping`` is None for first-order agents."""

    lr_actor: float
    lr_critic: float
    batch_size: int
    damping: float | None = None

    def validate(
        self, kind: OptimizerKind, batch_bounds: tuple[int, int] = (64, 512)
    ) -> None:
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")
        lo, hi = batch_bounds
        if not lo <= self.batch_size <= hi:
            raise ValueError(
                f"batch_size {self.batch_size} outside bounds [{lo}, {hi}]"
            )
        if kind is OptimizerKind.ADAM:
            if self.damping is not None:
                raise ValueError("Adam agents take no damping parameter")
            return
        if self.damping is None:
            raise ValueError(f"{kind} requires a damping parameter")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if kind is OptimizerKind.KFAC and self.damping < KFAC_MIN_DAMPING:
            raise ValueError(
                f"K-FAC damping must be >= {KFAC_MIN_DAMPING} "
                f"(got {self.damping}); inverses are not reliably "
                "positive-definite below that"
            )


@dataclass
class SamplingBand:
    """Initial-value ranges for one optimizer kind's hyperparameters."""

    lr_low: float = 1e-4
    lr_high: float = 1e-3
    batch_choices: tuple[int, ...] = (128, 256)
    damping_low: float | None = None
    damping_high: float | None = None

    @classmethod
    def default_for(cls, kind: OptimizerKind) -> "SamplingBand":
        if kind is OptimizerKind.ADAM:
            return cls()
        if kind is OptimizerKind.DIAG_GGN:
            return cls(damping_low=1e-3, damping_high=1.0)
        return cls(damping_low=1.0, damping_high=10.0)


def _log_uniform(rng: np.random.Generator, low: float, high: float) -> float:
    return float(np.exp(rng.uniform(math.log(low), math.log(high))))


def sample_hyperparams(
    kind: OptimizerKind, rng: np.random.Generator, band: SamplingBand | None = None
) -> HyperparamSet:
    """Draw an initial hyperparameter set (log-uniform rates and damping)."""
    band = band or SamplingBand.default_for(kind)
    lr_actor = _log_uniform(rng, band.lr_low, band.lr_high)
    lr_critic = _log_uniform(rng, band.lr_low, band.lr_high)
    batch = int(band.batch_choices[rng.integers(len(band.batch_choices))])
    damping = None
    if kind is not OptimizerKind.ADAM:
        if band.damping_low is None or band.damping_high is None:
            band = replace(
                band,
                damping_low=SamplingBand.default_for(kind).damping_low,
                damping_high=SamplingBand.default_for(kind).damping_high,
            )
        damping = _log_uniform(rng, band.damping_low, band.damping_high)
        if kind is OptimizerKind.KFAC:
            damping = max(KFAC_MIN_DAMPING, damping)
    return HyperparamSet(lr_actor, lr_critic, batch, damping)


def perturb(
    h: HyperparamSet,
    kind: OptimizerKind,
    rng: np.random.Generator,
    batch_bounds: tuple[int, int] = (64, 512),
) -> HyperparamSet:
    """Multiply each tunable independently by 0.8 or 1.2 (fair coin each).

    Coins are drawn in field order (lr_actor, lr_critic, batch_size, damping)
    so a seeded generator reproduces the same perturbation.  Batch size is
    rounded to the nearest integer and clamped to bounds; K-FAC damping is
    clamped to its floor.
    """

    def coin() -> float:
        return 0.8 if rng.random() < 0.5 else 1.2

    lr_actor = h.lr_actor * coin()
    lr_critic = h.lr_critic * coin()
    lo, hi = batch_bounds
    batch = min(hi, max(lo, round(h.batch_size * coin())))
    damping = h.damping
    if damping is not None:
        damping = damping * coin()
        if kind is OptimizerKind.KFAC:
            damping = max(KFAC_MIN_DAMPING, damping)
    return HyperparamSet(lr_actor, lr_critic, batch, damping)


def mse_loss_grad(outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample gradient of mean-over-outputs squared error: (2/C)(y_hat - y)."""
    return (2.0 / outputs.shape[1]) * (outputs - targets)


def diag_ggn_step(
    net: NetworkParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    lr: float,
    damping: float,
) -> NetworkParams:
    """Damped diagonal Gauss-Newton step on an MSE batch."""
    outputs = nets.forward(net, inputs)
    capture = nets.backward(net, inputs, mse_loss_grad(outputs, targets))
    curv = diag_ggn(net, inputs)
    delta = damped_newton_step(curv, capture.grad, damping, lr)
    return nets.unflatten(net, nets.flatten(net) + delta)


def kfac_step(
    net: NetworkParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    lr: float,
    damping: float,
    blocks: KroneckerBlocks | None = None,
    decay: float = 0.95,
) -> tuple[NetworkParams, KroneckerBlocks]:
    """Kronecker-preconditioned step on an MSE batch.

    Factor statistics are refreshed (EMA against ``blocks``) before the solve;
    a failed factorization raises CholeskyFailure and leaves the parameters
    unchanged at the caller.
    """
    outputs = nets.forward(net, inputs)
    capture = nets.backward(net, inputs, mse_loss_grad(outputs, targets), capture=True)
    new_blocks = kfac_factors(capture, prior=blocks, decay=decay)
    preconditioned = kron_precondition(new_blocks, damping, capture.grad)
    new_net = nets.unflatten(net, nets.flatten(net) - lr * preconditioned)
    return new_net, new_blocks


@dataclass
class NetOptimizer:
    """Optimizer state for one network, dispatching on the agent's kind.

    Kronecker factor statistics survive a CholeskyFailure (the refresh
    happened); the parameter step is what gets skipped.
    """

    kind: OptimizerKind
    adam: AdamState | None = None
    blocks: KroneckerBlocks | None = None
    kfac_decay: float = 0.95

    @classmethod
    def fresh(cls, kind: OptimizerKind, dim: int, kfac_decay: float = 0.95) -> "NetOptimizer":
        adam = AdamState.zeros(dim) if kind is OptimizerKind.ADAM else None
        return cls(kind=kind, adam=adam, blocks=None, kfac_decay=kfac_decay)

    def reset(self, dim: int) -> None:
        """Drop moments/factors (used after a population transfer)."""
        self.adam = AdamState.zeros(dim) if self.kind is OptimizerKind.ADAM else None
        self.blocks = None

    def step_supervised(
        self,
        net: NetworkParams,
        inputs: np.ndarray,
        targets: np.ndarray,
        lr: float,
        damping: float | None,
    ) -> NetworkParams:
        """Update ``net`` on an MSE regression batch (critic path)."""
        outputs = nets.forward(net, inputs)
        loss_grad = mse_loss_grad(outputs, targets)
        if self.kind is OptimizerKind.ADAM:
            capture = nets.backward(net, inputs, loss_grad)
            params, self.adam = adam_step(self.adam, nets.flatten(net), capture.grad, lr)
            return nets.unflatten(net, params)
        if self.kind is OptimizerKind.DIAG_GGN:
            capture = nets.backward(net, inputs, loss_grad)
            curv = diag_ggn(net, inputs)
            delta = damped_newton_step(curv, capture.grad, damping, lr)
            return nets.unflatten(net, nets.flatten(net) + delta)
        capture = nets.backward(net, inputs, loss_grad, capture=True)
        self.blocks = kfac_factors(capture, prior=self.blocks, decay=self.kfac_decay)
        preconditioned = kron_precondition(self.blocks, damping, capture.grad)
        return nets.unflatten(net, nets.flatten(net) - lr * preconditioned)

    def step_from_capture(
        self,
        net: NetworkParams,
        capture: BackwardCapture,
        lr: float,
        damping: float | None,
    ) -> NetworkParams:
        """Update ``net`` from an already-backpropagated capture (actor path).

        The diagonal stepper uses the empirical Fisher here: the actor loss
        runs through an external critic, so it has no PSD Gauss-Newton of
        its own.
        """
        if self.kind is OptimizerKind.ADAM:
            params, self.adam = adam_step(self.adam, nets.flatten(net), capture.grad, lr)
            return nets.unflatten(net, params)
        if self.kind is OptimizerKind.DIAG_GGN:
            curv = empirical_fisher_diag(capture)
            delta = damped_newton_step(curv, capture.grad, damping, lr)
            return nets.unflatten(net, nets.flatten(net) + delta)
        self.blocks = kfac_factors(capture, prior=self.blocks, decay=self.kfac_decay)
        preconditioned = kron_precondition(self.blocks, damping, capture.grad)
        return nets.unflatten(net, nets.flatten(net) - lr * preconditioned)
