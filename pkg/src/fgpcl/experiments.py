"""Desk-scale evidence experiments: the 2-D free-feature steepest-descent
simulation and the 3-D-feature digits toy, plus class-separation scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor

from .backbones import MnistToy
from .datasets import get_dataset
from .errors import ContractError, FgpclError
from .geometry import augment_embedding, augment_feature, normalize
from .losses import bce_classification_loss
from .trainer import _batched_features


@dataclass
class FreeFeatureProblem:
    """One trainable feature and one embedding per class, trained jointly."""
    num_classes: int
    dim: int = 2
    normalization: str = "rectified_cosine"  # or "cosine"
    steps: int = 5000
    learning_rate: float = 0.1
    restarts: int = 5  # best-of-restarts guards against collapse local minima

    def __post_init__(self):
        if self.num_classes < 2:
            raise ContractError("need at least 2 classes")
        if self.dim < 2:
            raise ContractError("need at least 2 feature dimensions")


@dataclass
class SimulationResult:
    features: Tensor       # projected (un-augmented) features [K, dim]
    embeddings: Tensor     # projected embeddings [K, dim]
    alignment: Tensor      # cos(f_k, w_k) per class [K]
    pairwise_cos: Tensor   # feature-feature cosine table [K, K]
    losses: list[float] = field(default_factory=list)


def _free_activations(f: Tensor, w: Tensor, b: Tensor, normalization: str) -> Tensor:
    if normalization == "rectified_cosine":
        fbar = normalize(augment_feature(f))
        wbar = normalize(augment_embedding(w, b))
    else:
        fbar, wbar = normalize(f), normalize(w)
    return fbar @ wbar.t()


def run_2d_simulation(problem: FreeFeatureProblem, seed: int = 0) -> SimulationResult:
    """Steepest descent on the K x K activation table under the BCE loss.

    Runs ``problem.restarts`` descents from independent inits (derived
    deterministically from ``seed``) and keeps the lowest-loss solution;
    single random inits frequently land in collapsed local minima even for
    small class counts.
    """
    best = None
    for r in range(max(1, problem.restarts)):
        result = _single_descent(problem, seed * 7919 + r)
        if best is None or result.losses[-1] < best.losses[-1]:
            best = result
    return best


def _single_descent(problem: FreeFeatureProblem, init_seed: int) -> SimulationResult:
    gen = torch.Generator().manual_seed(init_seed)
    k, d = problem.num_classes, problem.dim
    f = torch.randn(k, d, generator=gen, requires_grad=True)
    w = torch.randn(k, d, generator=gen, requires_grad=True)
    b = torch.zeros(k, requires_grad=True)
    eta = torch.tensor(1.0, requires_grad=True)
    params = [f, w, eta] + ([b] if problem.normalization == "rectified_cosine" else [])
    labels = torch.arange(k)
    losses: list[float] = []
    for _ in range(problem.steps):
        acts = _free_activations(f, w, b, problem.normalization)
        loss = bce_classification_loss(acts, labels, eta).mean()
        if not torch.isfinite(loss):
            raise FgpclError(f"simulation diverged; loss trace tail: {losses[-5:]}")
        for p in params:
            if p.grad is not None:
                p.grad = None
        loss.backward()
        with torch.no_grad():
            for p in params:
                p -= problem.learning_rate * p.grad
        losses.append(float(loss.detach()))
    with torch.no_grad():
        fbar, wbar = normalize(f), normalize(w)
        # (w, eta) -> (-w, -eta) leaves every prediction unchanged, so fold
        # the sign of eta into the alignment score
        alignment = torch.sign(eta) * (fbar * wbar).sum(dim=1)
        pairwise = fbar @ fbar.t()
    return SimulationResult(f.detach(), w.detach(), alignment, pairwise, losses)


def measure_separation(features: Tensor, labels: Tensor) -> float:
    """Mean pairwise angular distance between normalized class centroids."""
    ids = sorted(set(int(l) for l in labels))
    if len(ids) < 2:
        raise ContractError("need at least 2 classes to measure separation")
    centroids = []
    for c in ids:
        mask = labels == c
        if not mask.any():
            raise ContractError(f"class {c} has no samples")
        centroids.append(normalize(features[mask].mean(dim=0)))
    c = torch.stack(centroids)
    cos = (c @ c.t()).clamp(-1.0, 1.0)
    angles = torch.acos(cos)
    n = len(ids)
    triu = torch.triu_indices(n, n, offset=1)
    return float(angles[triu[0], triu[1]].mean())


def run_mnist_toy(normalization: str = "rectified_cosine", seed: int = 0,
                  dataset: str = "digits", data_root: str | None = None,
                  epochs: int = 30, batch_size: int = 128,
                  learning_rate: float = 0.2) -> tuple[MnistToy, float]:
    """Train the shallow 3-D-feature net on all 10 classes and score
    class separation of the learned features.
    """
    train, test, _ = get_dataset(dataset, data_root)
    torch.manual_seed(seed)
    net = MnistToy(in_channels=train.inputs.shape[1])
    w = torch.nn.Parameter((torch.rand(10, net.feature_dim) * 2 - 1) / net.feature_dim ** 0.5)
    b = torch.nn.Parameter(torch.zeros(10))
    eta = torch.nn.Parameter(torch.tensor(1.0))
    params = list(net.parameters()) + [w, b, eta]
    opt = torch.optim.SGD(params, lr=learning_rate, momentum=0.9)
    for epoch in range(epochs):
        gen = torch.Generator().manual_seed(hash((seed, epoch)) % 2 ** 31)
        perm = torch.randperm(len(train), generator=gen)
        for start in range(0, len(train), batch_size):
            idx = perm[start:start + batch_size]
            feats = net(train.inputs[idx])
            acts = _free_activations(feats, w, b, normalization)
            loss = bce_classification_loss(acts, train.labels[idx], eta).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        feats = _batched_features(_FeatureWrapper(net), test.inputs)
    return net, measure_separation(feats, test.labels)


class _FeatureWrapper:
    def __init__(self, net):
        self.net = net

    def features(self, x):
        return self.net(x)


def compare_toy_normalizations(seeds: list[int], **kwargs) -> dict:
    """Per-seed separation scores for both normalizations, plus means."""
    out = {"rectified_cosine": [], "cosine": []}
    for norm in out:
        for s in seeds:
            _, score = run_mnist_toy(normalization=norm, seed=s, **kwargs)
            out[norm].append(score)
    return {
        "seeds": seeds,
        "scores": out,
        "mean": {k: sum(v) / len(v) for k, v in out.items()},
    }


def plot_simulation(result: SimulationResult, path: str | Path, title: str = "") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    k = len(result.features)
    colors = plt.cm.tab10(range(k))
    f = result.features.numpy()
    w = result.embeddings.numpy()
    for i in range(k):
        ax.scatter(*f[i][:2], color=colors[i], s=60, zorder=3)
        wn = w[i] / (max(1e-12, (w[i] ** 2).sum() ** 0.5))
        ax.plot([0, wn[0]], [0, wn[1]], color=colors[i], lw=2)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_separation_report(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2))
