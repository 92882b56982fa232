"""Numerical descent diagnostics for compositional networks.

The central inequality bounds the loss change of a perturbation by how
far the perturbed gradient drifts from the gradient at the base point:

    loss(W + dW) - loss(W)
      <= - sum_k ||g_k|| ||dW_k|| [ cos(theta_k) - max_t ||g_k(W + t dW) - g_k(W)|| / ||g_k|| ]

with theta_k the angle between dW_k and -g_k. Deep relative trust models
the bracketed breakdown term as prod_l (1 + ||dW_l|| / ||W_l||) - 1, and
for the multiplicative sign update dW = -eta |W| * sign(g) this yields a
closed-form learning-rate bound, eta < (1 + cos gamma_min)^(1/L) - 1,
where gamma_k is the angle between |g_k| and |W_k|.

Every parameter tensor (each weight matrix and each bias vector) counts
as one group; the inequalities hold for any grouping, and this matches
how the optimizers treat parameters. The max over t is approximated on a
uniform grid, so measured breakdowns are lower bounds of the true max.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Dataset, GradientBundle, Mlp, backward, batch_loss, gradient_at_perturbed
from .optim import mult_sign_step
from .tensor import DegenerateAngleError, ShapeError, Tensor, angle_between, frobenius_norm


def _flat_delta(delta) -> list[Tensor]:
    if isinstance(delta, GradientBundle):
        return delta.flat()
    return [np.asarray(d, dtype=np.float64) for d in delta]


def drt_bound(net: Mlp, delta) -> float:
    """Deep-relative-trust bound: prod_l (1 + ||d_l||_F / ||W_l||_F) - 1."""
    params = net.param_list()
    delta = _flat_delta(delta)
    if len(delta) != len(params):
        raise ShapeError(f"delta has {len(delta)} tensors, expected {len(params)}")
    bound = 1.0
    for p, d in zip(params, delta):
        wn = frobenius_norm(p)
        if wn == 0.0:
            raise ValueError("deep relative trust undefined for a zero-norm group")
        bound *= 1.0 + frobenius_norm(d) / wn
    return bound - 1.0


def measure_breakdown(net: Mlp, delta, batch: Dataset, t_samples: int = 64) -> np.ndarray:
    """Max relative gradient change per group over a uniform t-grid in [0, 1].

    Returns one value per parameter tensor. The grid max is a lower bound
    of the true max over the segment.
    """
    if t_samples < 2:
        raise ValueError(f"t_samples must be >= 2, got {t_samples}")
    delta = _flat_delta(delta)
    base = backward(net, batch).flat()
    base_norms = np.array([frobenius_norm(g) for g in base])
    if np.any(base_norms == 0.0):
        raise ValueError("breakdown undefined: zero gradient at the base point")
    worst = np.zeros(len(base))
    for t in np.linspace(0.0, 1.0, t_samples):
        moved = gradient_at_perturbed(net, delta, float(t), batch).flat()
        rel = np.array(
            [frobenius_norm(gm - gb) for gm, gb in zip(moved, base)]
        ) / base_norms
        worst = np.maximum(worst, rel)
    return worst


@dataclass(frozen=True)
class GroupDescent:
    """One parameter group's angle, measured breakdown, and bracket."""

    cos_theta: float
    breakdown: float
    bracket: float


@dataclass(frozen=True)
class DescentReport:
    """Both sides of the descent inequality for one perturbation."""

    groups: tuple[GroupDescent, ...]
    drt_bound: float
    loss_before: float
    loss_after: float
    bound_rhs: float

    @property
    def loss_change(self) -> float:
        return self.loss_after - self.loss_before

    @property
    def slack(self) -> float:
        """bound_rhs - actual change; nonnegative when the bound holds."""
        return self.bound_rhs - self.loss_change

    def to_dict(self) -> dict:
        return {
            "groups": [
                {"cos_theta": g.cos_theta, "breakdown": g.breakdown, "bracket": g.bracket}
                for g in self.groups
            ],
            "drt_bound": self.drt_bound,
            "loss_before": self.loss_before,
            "loss_after": self.loss_after,
            "bound_rhs": self.bound_rhs,
            "loss_change": self.loss_change,
            "slack": self.slack,
        }


def descent_gap(net: Mlp, delta, batch: Dataset, t_samples: int = 64) -> DescentReport:
    """Evaluate the descent inequality: actual loss change vs its bound.

    Groups with zero perturbation contribute nothing to the bound; their
    cos_theta is reported as 0.
    """
    delta = _flat_delta(delta)
    bundle = backward(net, batch)
    grads = bundle.flat()
    breakdowns = measure_breakdown(net, delta, batch, t_samples)
    groups = []
    rhs = 0.0
    for d, g, m in zip(delta, grads, breakdowns):
        dn = frobenius_norm(d)
        gn = frobenius_norm(g)
        if dn == 0.0:
            groups.append(GroupDescent(cos_theta=0.0, breakdown=float(m), bracket=0.0))
            continue
        cos_theta = float(np.cos(angle_between(d, -g)))
        bracket = cos_theta - float(m)
        groups.append(GroupDescent(cos_theta, float(m), bracket))
        rhs -= gn * dn * bracket
    moved = [p + d for p, d in zip(net.param_list(), delta)]
    loss_after = batch_loss(net.with_params(moved), batch)
    return DescentReport(
        groups=tuple(groups),
        drt_bound=drt_bound(net, delta),
        loss_before=bundle.loss_value,
        loss_after=loss_after,
        bound_rhs=rhs,
    )


def eta_descent_bound(depth: int, cos_gamma_min: float) -> float:
    """Largest guaranteed-descent learning rate: (1 + cos_gamma)^(1/L) - 1."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if not 0.0 <= cos_gamma_min <= 1.0:
        raise ValueError(f"cos_gamma_min must lie in [0, 1], got {cos_gamma_min}")
    return float((1.0 + cos_gamma_min) ** (1.0 / depth) - 1.0)


def cos_gamma(net: Mlp, grads) -> np.ndarray:
    """Per-group cosine of the angle between |g_k| and |W_k|.

    Both vectors are nonnegative, so the result lies in [0, 1]; it is 1
    when the absolute gradient is proportional to the absolute weight and
    0 when their supports are disjoint.
    """
    params = net.param_list()
    grads = _flat_delta(grads)
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradient tensors for {len(params)} groups")
    out = []
    for p, g in zip(params, grads):
        pn = frobenius_norm(p)
        gn = frobenius_norm(g)
        if pn == 0.0 or gn == 0.0:
            raise DegenerateAngleError("cos gamma undefined for a zero group")
        c = float(np.dot(np.abs(g).ravel(), np.abs(p).ravel())) / (gn * pn)
        out.append(float(np.clip(c, 0.0, 1.0)))
    return np.array(out)


def gaussian_cos_gamma_mc(dim: int, trials: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate of E[cos gamma] for iid Gaussian vectors.

    Draws x, y ~ Normal(0, I_dim) and averages the cosine of the angle
    between |x| and |y| over ``trials`` draws; returns (mean, stderr).
    For large dim the estimate approaches 2/pi ~= 0.6366.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    vals = np.empty(trials)
    for i in range(trials):
        x = np.abs(rng.standard_normal(dim))
        y = np.abs(rng.standard_normal(dim))
        vals[i] = np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return float(np.mean(vals)), stderr


@dataclass(frozen=True)
class MultStepReport:
    """Diagnostics for one multiplicative sign step at rate eta."""

    eta: float
    cos_gamma: tuple[float, ...]
    theta: tuple[float, ...]
    gamma: tuple[float, ...]
    max_angle_identity_error: float
    max_relative_step_error: float
    loss_before: float
    loss_after: float

    @property
    def descended(self) -> bool:
        return self.loss_after < self.loss_before

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "cos_gamma": list(self.cos_gamma),
            "theta": list(self.theta),
            "gamma": list(self.gamma),
            "max_angle_identity_error": self.max_angle_identity_error,
            "max_relative_step_error": self.max_relative_step_error,
            "loss_before": self.loss_before,
            "loss_after": self.loss_after,
            "descended": self.descended,
        }


def verify_madam_descent(net: Mlp, batch: Dataset, eta: float) -> MultStepReport:
    """Apply one multiplicative sign step and check its two identities.

    For dW = -eta |W| * sign(g): (a) the angle between dW_k and -g_k
    equals the angle between |W_k| and |g_k| for every group, and (b) the
    relative step ||dW_k||_F / ||W_k||_F equals eta exactly when no weight
    or gradient element is zero. Reports both angle families, the worst
    identity error, and whether the loss decreased.
    """
    params = net.param_list()
    bundle = backward(net, batch)
    grads = bundle.flat()
    new_params = mult_sign_step(params, grads, eta)
    deltas = [w1 - w0 for w1, w0 in zip(new_params, params)]
    thetas = []
    gammas = []
    identity_err = 0.0
    step_err = 0.0
    for p, g, d in zip(params, grads, deltas):
        theta = angle_between(d, -g)
        gamma = angle_between(np.abs(p), np.abs(g))
        thetas.append(float(theta))
        gammas.append(float(gamma))
        identity_err = max(identity_err, abs(theta - gamma))
        rel = frobenius_norm(d) / frobenius_norm(p)
        step_err = max(step_err, abs(rel - eta))
    loss_after = batch_loss(net.with_params(new_params), batch)
    return MultStepReport(
        eta=eta,
        cos_gamma=tuple(float(np.cos(g)) for g in gammas),
        theta=tuple(thetas),
        gamma=tuple(gammas),
        max_angle_identity_error=identity_err,
        max_relative_step_error=step_err,
        loss_before=bundle.loss_value,
        loss_after=loss_after,
    )
