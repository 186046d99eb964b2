"""Distillation losses in the pluggable edge-preservation form, plus the
binary cross-entropy classification loss and the combined objective.

All per-example losses accept batched tensors and return one value per
example; every function is differentiable through torch autograd.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ConfigError, ContractError
from .geometry import _check_unit, squared_distances

LOG_FLOOR = 1e-12


def _log(p: Tensor) -> Tensor:
    return torch.log(p.clamp(min=LOG_FLOOR))


def bce_classification_loss(activations: Tensor, label: int | Tensor,
                            eta: Tensor | float = 1.0) -> Tensor:
    """Sum of per-class binary cross-entropies with an eta-scaled sigmoid.

    ``activations`` is [C] for one example or [N, C] for a batch (then
    ``label`` is [N] and the result is [N]).
    """
    if not torch.is_tensor(eta):
        eta = torch.as_tensor(float(eta), dtype=activations.dtype)
    z = eta * activations
    if activations.dim() == 1:
        label = int(label)
        if label < 0 or label >= activations.shape[0]:
            raise ContractError(f"label {label} outside the class range")
        target = torch.zeros_like(activations)
        target[label] = 1.0
    else:
        label = torch.as_tensor(label)
        if label.min() < 0 or label.max() >= activations.shape[1]:
            raise ContractError("label outside the class range")
        target = torch.zeros_like(activations)
        target[torch.arange(len(label)), label] = 1.0
    # -log sigmoid(z) for the positive class, -log sigmoid(-z) for the rest
    per_class = -target * F.logsigmoid(z) - (1 - target) * F.logsigmoid(-z)
    return per_class.sum(dim=-1)


def dist_bce(p_star: Tensor, p: Tensor) -> Tensor:
    """Per-example sum of binary cross-entropies against the old strengths."""
    if p_star.shape != p.shape:
        raise ContractError("old/new strength shapes differ")
    if p_star.numel() == 0:
        return torch.zeros(p.shape[:-1], dtype=p.dtype)
    terms = -p_star * _log(p) - (1 - p_star) * _log(1 - p)
    return terms.sum(dim=-1)


def dist_kl(p_star: Tensor, p: Tensor) -> Tensor:
    """KL divergence per example between old and new softmax strengths."""
    if p_star.shape != p.shape:
        raise ContractError("old/new strength shapes differ")
    if p_star.numel() == 0:
        return torch.zeros(p.shape[:-1], dtype=p.dtype)
    for name, rows in (("p_star", p_star), ("p", p)):
        if (rows.sum(dim=-1) - 1.0).abs().max() > 1e-6:
            raise ContractError(f"{name} rows must sum to 1")
    # 0 log 0 := 0 for degenerate old mass
    terms = torch.where(p_star > 0, p_star * (_log(p_star) - _log(p)),
                        torch.zeros_like(p_star))
    return terms.sum(dim=-1)


def dist_weighted_euclidean(w_star_bar: Tensor, f_star_bar: Tensor,
                            w_bar: Tensor, f_bar: Tensor) -> Tensor:
    """Old-strength-weighted squared change of pairwise squared distances.

    Inputs are unit vectors: old/new embeddings [C, d] and old/new features
    ([d] or [N, d]). Returns one value per example.
    """
    for name, v in (("w_star_bar", w_star_bar), ("f_star_bar", f_star_bar),
                    ("w_bar", w_bar), ("f_bar", f_bar)):
        if v.numel():
            _check_unit(v, name)
    if w_star_bar.numel() == 0:
        shape = f_bar.shape[:-1] if f_bar.dim() > 1 else ()
        return torch.zeros(shape, dtype=f_bar.dtype)
    d_star = squared_distances(w_star_bar, f_star_bar)
    d_new = squared_distances(w_bar, f_bar)
    terms = torch.exp(-d_star / 2.0) * (d_star - d_new) ** 2
    return terms.sum(dim=-1)


# ---------------------------------------------------------------------------
# General edge-preservation form: sum over old classes of gamma * D(p*, p).

def _softmax_rows(a: Tensor, temperature: float) -> Tensor:
    return torch.softmax(a / temperature, dim=-1)


@dataclass(frozen=True)
class DistillationSpec:
    """One instantiation of the general distillation form.

    ``edge_strength`` maps an activation row/batch to strengths p,
    ``edge_weight`` maps old strengths to per-edge weights gamma, and
    ``discrepancy`` compares old and new strengths per edge.
    """
    name: str
    activation_kind: str  # sigmoid-dot | softmax-dot | euclidean
    edge_strength: Callable[[Tensor], Tensor]
    edge_weight: Callable[[Tensor], Tensor]
    discrepancy: Callable[[Tensor, Tensor], Tensor]


@dataclass(frozen=True)
class EdgeSnapshot:
    """Frozen activations and edge strengths from the old model."""
    a_star: Tensor
    p_star: Tensor
    activation_kind: str

    @classmethod
    def from_activations(cls, spec: DistillationSpec, a_star: Tensor) -> "EdgeSnapshot":
        return cls(a_star.detach(), spec.edge_strength(a_star).detach(),
                   spec.activation_kind)


def spec_icarl_bce() -> DistillationSpec:
    return DistillationSpec(
        name="icarl_bce",
        activation_kind="sigmoid-dot",
        edge_strength=torch.sigmoid,
        edge_weight=torch.ones_like,
        discrepancy=lambda ps, p: -ps * _log(p) - (1 - ps) * _log(1 - p),
    )


def spec_e2e_kl(temperature: float = 2.0) -> DistillationSpec:
    return DistillationSpec(
        name="e2e_kl",
        activation_kind="softmax-dot",
        edge_strength=lambda a: _softmax_rows(a, temperature),
        edge_weight=lambda ps: ps,
        discrepancy=lambda ps, p: _log(ps) - _log(p),
    )


def _log_ratio_sq(ps: Tensor, p: Tensor) -> Tensor:
    # equals the squared change in pairwise squared distance: p = exp(-d/2)
    return 4.0 * (_log(ps) - _log(p)) ** 2


def spec_weighted_euclidean() -> DistillationSpec:
    return DistillationSpec(
        name="wE",
        activation_kind="euclidean",
        edge_strength=torch.exp,
        edge_weight=lambda ps: ps,
        discrepancy=_log_ratio_sq,
    )


def spec_wE_uniform_gamma() -> DistillationSpec:
    return DistillationSpec(
        name="wE_uniform_gamma",
        activation_kind="euclidean",
        edge_strength=torch.exp,
        edge_weight=torch.ones_like,
        discrepancy=_log_ratio_sq,
    )


def spec_bce_with_wE_gamma() -> DistillationSpec:
    # asymmetric-discrepancy ablation: BCE discrepancy under the wE weighting
    return DistillationSpec(
        name="bce_with_wE_gamma",
        activation_kind="euclidean",
        edge_strength=torch.exp,
        edge_weight=lambda ps: ps,
        discrepancy=lambda ps, p: -ps * _log(p) - (1 - ps) * _log(1 - p),
    )


DISTILLATION_SPECS: dict[str, Callable[[], DistillationSpec]] = {
    "wE": spec_weighted_euclidean,
    "icarl_bce": spec_icarl_bce,
    "e2e_kl": spec_e2e_kl,
    "wE_uniform_gamma": spec_wE_uniform_gamma,
    "bce_with_wE_gamma": spec_bce_with_wE_gamma,
}


def general_distillation(spec: DistillationSpec, snapshot: EdgeSnapshot,
                         a_new: Tensor) -> Tensor:
    """Per-example sum over old classes of gamma * D(p*, p)."""
    if spec.activation_kind != snapshot.activation_kind:
        raise ContractError(
            f"spec activation {spec.activation_kind!r} does not match "
            f"snapshot {snapshot.activation_kind!r}")
    if a_new.shape != snapshot.a_star.shape:
        raise ContractError("new activations must match snapshot shape")
    if snapshot.a_star.numel() == 0:
        return torch.zeros(a_new.shape[:-1], dtype=a_new.dtype)
    p = spec.edge_strength(a_new)
    gamma = spec.edge_weight(snapshot.p_star)
    return (gamma * spec.discrepancy(snapshot.p_star, p)).sum(dim=-1)


# ---------------------------------------------------------------------------
# Combined objective.

@dataclass(frozen=True)
class LambdaSchedule:
    lambda_base: float = 0.1


def lambda_value(schedule: LambdaSchedule, state) -> float:
    """lambda_base * sqrt(|C_old| / |C_all|); zero on the first phase."""
    n_old, n_all = len(state.C_old), len(state.C_all)
    if n_all == 0:
        raise ContractError("C_all must be nonempty")
    return schedule.lambda_base * (n_old / n_all) ** 0.5


def total_objective(class_activations: Tensor, labels: Tensor,
                    eta: Tensor | float, lam: float = 0.0,
                    distillation: Optional[Tensor] = None) -> Tensor:
    """Batch mean of BCE plus lambda-weighted distillation.

    ``distillation`` is the per-example distillation loss [N]; required
    whenever lam > 0 (i.e. after the first phase).
    """
    cls = bce_classification_loss(class_activations, labels, eta)
    if lam > 0.0:
        if distillation is None:
            raise ConfigError("distillation term required when lambda > 0")
        cls = cls + lam * distillation
    return cls.mean()
