"""Normalizations and activations defining edge strengths on the feature graph.

Everything here operates on torch tensors so gradients flow through the
activations during training. Vectors may be single (``[d]``) or batched
(``[n, d]``); class embeddings may likewise be ``[d]`` or ``[c, d]``. Batched
feature/embedding pairs produce an ``[n, c]`` activation table.
"""

from __future__ import annotations

import torch
from torch import Tensor

from .errors import ContractError

NORM_EPS = 1e-12
UNIT_TOL = 1e-3


def normalize(v: Tensor, dim: int = -1) -> Tensor:
    """L2-normalize along ``dim``; rejects (near-)zero vectors.

    Vectors with norm below 1e-12 raise instead of being clamped, so a
    collapsed feature extractor fails loudly.
    """
    norms = v.norm(dim=dim, keepdim=True)
    if (norms < NORM_EPS).any():
        raise ContractError("cannot normalize a zero vector")
    return v / norms


def augment_feature(f: Tensor) -> Tensor:
    """Append the constant 1 to a feature vector (or batch of them)."""
    ones = f.new_ones(f.shape[:-1] + (1,))
    return torch.cat([f, ones], dim=-1)


def augment_embedding(w: Tensor, b: Tensor) -> Tensor:
    """Append the learnable bias to a class embedding (or batch of them)."""
    b = b.reshape(w.shape[:-1] + (1,))
    return torch.cat([w, b], dim=-1)


def _pairwise_dot(w: Tensor, f: Tensor) -> Tensor:
    """Dot products between features and embeddings.

    [d]x[d] -> scalar, [c,d]x[d] -> [c], [c,d]x[n,d] -> [n,c].
    """
    if w.dim() == 1 and f.dim() == 1:
        return w @ f
    if w.dim() == 1:
        return f @ w
    if f.dim() == 1:
        return w @ f
    return f @ w.t()


def cosine_activation(w: Tensor, f: Tensor) -> Tensor:
    """Cosine of the angle between embedding(s) and feature(s)."""
    return _pairwise_dot(normalize(w), normalize(f))


def rectified_cosine_activation(w: Tensor, b: Tensor, f: Tensor) -> Tensor:
    """Cosine activation in the augmented space (w, b) x (f, 1)."""
    return _pairwise_dot(normalize(augment_embedding(w, b)), normalize(augment_feature(f)))


def _check_unit(v: Tensor, name: str) -> None:
    norms = v.norm(dim=-1)
    if (norms - 1.0).abs().max() > UNIT_TOL:
        raise ContractError(f"{name} must be unit-norm (deviation > {UNIT_TOL})")


def euclidean_activation(w_bar: Tensor, f_bar: Tensor) -> Tensor:
    """Negative half squared distance between unit vectors, in [-2, 0]."""
    _check_unit(w_bar, "embedding")
    _check_unit(f_bar, "feature")
    return -squared_distances(w_bar, f_bar) / 2.0


def squared_distances(w: Tensor, f: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances, same shape rules as activations."""
    if w.dim() == 1 and f.dim() == 1:
        return (w - f).pow(2).sum()
    if w.dim() == 1:
        return (f - w).pow(2).sum(-1)
    if f.dim() == 1:
        return (w - f).pow(2).sum(-1)
    # [n,d] features vs [c,d] embeddings -> [n,c]
    return (f.unsqueeze(1) - w.unsqueeze(0)).pow(2).sum(-1)


class CurvatureScale(torch.nn.Module):
    """Learnable curvature of the classification sigmoid, shared across classes."""

    def __init__(self, eta: float = 1.0):
        super().__init__()
        self.eta = torch.nn.Parameter(torch.tensor(float(eta)))

    def forward(self, a: Tensor) -> Tensor:
        return scaled_sigmoid(a, self.eta)


def scaled_sigmoid(a: Tensor, eta: Tensor | float) -> Tensor:
    """sigmoid(eta * a); eta = 0 flattens to 1/2 everywhere."""
    if not torch.is_tensor(eta):
        eta = torch.as_tensor(eta, dtype=a.dtype if torch.is_tensor(a) else None)
    a = torch.as_tensor(a)
    return torch.sigmoid(eta * a)
