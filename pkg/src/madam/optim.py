"""Update rules: multiplicative sign steps, Madam, and additive baselines.

The multiplicative family scales each weight by a factor close to one,
so every weight keeps its initial sign and the relative change per step
is bounded. Madam normalizes the raw gradient by a running
root-mean-square estimate, clamps the ratio, applies the exponential
multiplicative update, and finally clamps weight magnitudes:

    gbar2 <- (1 - beta) * g**2 + beta * gbar2
    r     <- clamp_{eta*/eta}( g / (sqrt(gbar2) + eps) )
    w     <- w * exp(-eta * sign(w) * r)
    w     <- clamp_{sigma*}(w)

There is deliberately no bias correction on the second-moment estimate,
so the first steps saturate the ratio clamp at eta*/eta. SGD with
momentum, Adam, and layerwise-relative LARS are provided as baselines.

All step functions are pure: they return fresh state and parameter
arrays and never mutate their arguments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .tensor import ShapeError, Tensor, clamp, frobenius_norm, guarded_div, sign

Params = list


def _check_shapes(params: Params, grads: Params, what: str) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"{what}: {len(params)} params vs {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"{what}: tensor {i} shapes {np.shape(p)} vs {np.shape(g)}")


def mult_sign_step(params: Params, grads: Params, eta: float) -> Params:
    """w' = w * (1 - eta * sign(w) * sign(g)) per element.

    Weights shrink where the signs of w and g agree and grow where they
    differ; a weight at exactly 0, or with zero gradient, stays put.
    Requires eta in (0, 1) so no weight can cross zero.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    _check_shapes(params, grads, "mult_sign_step")
    return [p * (1.0 - eta * sign(p) * sign(g)) for p, g in zip(params, grads)]


def exp_sign_step(params: Params, grads: Params, eta: float) -> Params:
    """w' = w * exp(-eta * sign(w) * sign(g)): the log-space form of the
    sign update, moving each weight by exactly +-eta in log magnitude."""
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    _check_shapes(params, grads, "exp_sign_step")
    return [p * np.exp(-eta * sign(p) * sign(g)) for p, g in zip(params, grads)]


@dataclass(frozen=True)
class MadamState:
    """Madam hyperparameters plus the per-parameter second-moment EMA.

    Defaults follow the recommended setting eta=0.01, eta*=8*eta,
    beta=0.999, with sigma* taken as 3x the initialization scale of each
    parameter tensor.
    """

    eta: float
    eta_star: float
    beta: float
    sigma_star: tuple[float, ...]
    gbar_sq: tuple[Tensor, ...]
    eps: float = 1e-12

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.eta_star < self.eta:
            raise ValueError(f"eta_star must be >= eta, got {self.eta_star} < {self.eta}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if len(self.sigma_star) != len(self.gbar_sq):
            raise ShapeError("sigma_star and gbar_sq must align per parameter tensor")
        if any(s <= 0 for s in self.sigma_star):
            raise ValueError("sigma_star entries must be positive")
        for g2 in self.gbar_sq:
            if np.any(np.asarray(g2) < 0):
                raise ValueError("gbar_sq must be nonnegative")

    @classmethod
    def init(cls, params: Params, sigma_star, eta: float = 0.01,
             eta_star: float | None = None, beta: float = 0.999,
             eps: float = 1e-12) -> "MadamState":
        """Fresh state with zero second moments for the given parameters.

        ``sigma_star`` is either one positive float shared by all tensors
        or a sequence with one value per parameter tensor.
        """
        if np.isscalar(sigma_star):
            sigmas = tuple(float(sigma_star) for _ in params)
        else:
            sigmas = tuple(float(s) for s in sigma_star)
            if len(sigmas) != len(params):
                raise ShapeError(f"{len(sigmas)} sigma_star values for {len(params)} tensors")
        zeros = tuple(np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params)
        return cls(eta=eta, eta_star=8.0 * eta if eta_star is None else eta_star,
                   beta=beta, sigma_star=sigmas, gbar_sq=zeros, eps=eps)

    def with_eta(self, eta: float) -> "MadamState":
        """Same state with a decayed typical perturbation; eta* shrinks with it."""
        ratio = self.eta_star / self.eta
        return replace(self, eta=eta, eta_star=ratio * eta)


def madam_step(state: MadamState, params: Params, grads: Params) -> tuple[MadamState, Params]:
    """One Madam update; returns (new state, new params).

    Before the weight clamp every weight is multiplied by a factor in
    [exp(-eta*), exp(+eta*)], and signs are preserved exactly.
    """
    _check_shapes(params, grads, "madam_step")
    if len(params) != len(state.gbar_sq):
        raise ShapeError(f"state tracks {len(state.gbar_sq)} tensors, got {len(params)}")
    new_g2 = []
    new_params = []
    for p, g, g2, sig in zip(params, grads, state.gbar_sq, state.sigma_star):
        g = np.asarray(g, dtype=np.float64)
        g2_next = (1.0 - state.beta) * np.square(g) + state.beta * g2
        r = clamp(guarded_div(g, np.sqrt(g2_next), state.eps), state.eta_star / state.eta)
        w = p * np.exp(-state.eta * sign(p) * r)
        new_params.append(clamp(w, sig))
        new_g2.append(g2_next)
    return replace(state, gbar_sq=tuple(new_g2)), new_params


@dataclass(frozen=True)
class BaselineState:
    """State for the additive baselines (sgd with momentum, adam)."""

    variant: str
    lr: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    step_count: int = 0
    buffers: tuple[tuple[Tensor, ...], ...] = ()

    @classmethod
    def init(cls, variant: str, params: Params, lr: float, momentum: float = 0.9,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
             l2: float = 0.0) -> "BaselineState":
        zeros = tuple(np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params)
        if variant == "sgd":
            buffers = (zeros,)
        elif variant == "adam":
            buffers = (zeros, tuple(np.zeros_like(z) for z in zeros))
        else:
            raise ValueError(f"unknown baseline variant: {variant!r}")
        return cls(variant=variant, lr=lr, momentum=momentum, beta1=beta1,
                   beta2=beta2, eps=eps, l2=l2, buffers=buffers)


def sgd_step(state: BaselineState, params: Params, grads: Params) -> tuple[BaselineState, Params]:
    """SGD with momentum: v <- momentum*v + g, w <- w - lr*v."""
    if state.variant != "sgd":
        raise ValueError(f"sgd_step got state for {state.variant!r}")
    _check_shapes(params, grads, "sgd_step")
    (vel,) = state.buffers
    new_vel = []
    new_params = []
    for p, g, v in zip(params, grads, vel):
        g = np.asarray(g, dtype=np.float64)
        if state.l2:
            g = g + state.l2 * p
        v_next = state.momentum * v + g
        new_vel.append(v_next)
        new_params.append(p - state.lr * v_next)
    return replace(state, buffers=(tuple(new_vel),), step_count=state.step_count + 1), new_params


def adam_step(state: BaselineState, params: Params, grads: Params) -> tuple[BaselineState, Params]:
    """Adam with bias-corrected first and second moments."""
    if state.variant != "adam":
        raise ValueError(f"adam_step got state for {state.variant!r}")
    _check_shapes(params, grads, "adam_step")
    m_buf, v_buf = state.buffers
    t = state.step_count + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_m = []
    new_v = []
    new_params = []
    for p, g, m, v in zip(params, grads, m_buf, v_buf):
        g = np.asarray(g, dtype=np.float64)
        if state.l2:
            g = g + state.l2 * p
        m_next = state.beta1 * m + (1.0 - state.beta1) * g
        v_next = state.beta2 * v + (1.0 - state.beta2) * np.square(g)
        m_hat = m_next / bc1
        v_hat = v_next / bc2
        new_m.append(m_next)
        new_v.append(v_next)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return replace(state, buffers=(tuple(new_m), tuple(new_v)), step_count=t), new_params


def lars_step(params: Params, grads: Params, eta: float) -> Params:
    """Layerwise relative step: w <- w - eta * (||w||_F / ||g||_F) * g.

    Each parameter tensor is its own group, so the relative change
    ||dw||_F / ||w||_F equals eta exactly for every updated group. Groups
    with zero gradient are left alone; groups with zero weight norm are
    skipped with a warning since the relative scale is undefined.
    """
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    _check_shapes(params, grads, "lars_step")
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        gn = frobenius_norm(g)
        if gn == 0.0:
            out.append(np.array(p, dtype=np.float64, copy=True))
            continue
        wn = frobenius_norm(p)
        if wn == 0.0:
            warnings.warn(f"lars_step: group {i} has zero weight norm, skipping")
            out.append(np.array(p, dtype=np.float64, copy=True))
            continue
        out.append(p - eta * (wn / gn) * g)
    return out
