"""The phase loop: snapshot the old model, assemble the phase pool, optimize
the combined objective, refresh exemplars, and evaluate per phase group.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
from torch import Tensor

from . import losses
from .backbones import build_backbone
from .data_stream import ArrayDataset, build_schedule, phase_data
from .datasets import get_dataset
from .errors import ConfigError, ContractError
from .exemplars import ExemplarStore, class_means, herd_select, nme_classify
from .geometry import augment_embedding, augment_feature, normalize
from .losses import (DISTILLATION_SPECS, EdgeSnapshot, LambdaSchedule,
                     general_distillation, lambda_value)
from .metrics import AccuracyMatrix, metrics_report, save_report


@dataclass(frozen=True)
class OptimizerSchedule:
    learning_rate: float = 0.1
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 5.0
    epochs: int = 10
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ConfigError("decay epochs must be strictly increasing")
        if self.decay_epochs and self.decay_epochs[-1] >= self.epochs:
            raise ConfigError("decay epochs must precede the epoch count")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.learning_rate / (self.decay_factor ** drops)


# Reference CIFAR-100 schedule; optional, not the desk-scale default.
CIFAR_REFERENCE_SCHEDULE = OptimizerSchedule(
    learning_rate=2.0, decay_epochs=(49, 63), decay_factor=5.0,
    epochs=70, batch_size=128, momentum=0.9, weight_decay=1e-4)


class CosineHead(nn.Module):
    """Per-class embeddings with cosine or rectified-cosine activations.

    Row order follows the order classes were added; ``class_ids`` maps rows
    to global class ids. The curvature scale eta is shared across classes
    and applied only inside the classification sigmoid.
    """

    def __init__(self, feature_dim: int, normalization: str = "rectified_cosine"):
        super().__init__()
        if normalization not in ("cosine", "rectified_cosine"):
            raise ConfigError(f"unknown normalization {normalization!r}")
        self.feature_dim = feature_dim
        self.normalization = normalization
        self.class_ids: list[int] = []
        self.weight = nn.Parameter(torch.empty(0, feature_dim))
        self.bias = nn.Parameter(torch.empty(0))
        self.eta = nn.Parameter(torch.tensor(1.0))

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def extend(self, new_class_ids: list[int], generator: torch.Generator | None = None):
        """Append one embedding row per new class; existing rows untouched."""
        if not new_class_ids:
            raise ContractError("must add at least one class")
        dup = set(new_class_ids) & set(self.class_ids)
        if dup:
            raise ContractError(f"classes already in head: {sorted(dup)}")
        n, d = len(new_class_ids), self.feature_dim
        gain = 1.0 / d ** 0.5
        new_w = (torch.rand(n, d, generator=generator) * 2 - 1) * gain
        self.weight = nn.Parameter(torch.cat([self.weight.data, new_w]))
        self.bias = nn.Parameter(torch.cat([self.bias.data, torch.zeros(n)]))
        self.class_ids = self.class_ids + list(new_class_ids)

    def rows_for(self, class_ids) -> list[int]:
        index = {c: r for r, c in enumerate(self.class_ids)}
        return [index[c] for c in class_ids]

    def normalized_embeddings(self, rows: list[int] | None = None) -> Tensor:
        w, b = self.weight, self.bias
        if rows is not None:
            idx = torch.as_tensor(rows, dtype=torch.long)
            w, b = w[idx], b[idx]
        if self.normalization == "rectified_cosine":
            return normalize(augment_embedding(w, b))
        return normalize(w)

    def normalized_features(self, feats: Tensor) -> Tensor:
        if self.normalization == "rectified_cosine":
            return normalize(augment_feature(feats))
        return normalize(feats)

    def activations(self, feats: Tensor, rows: list[int] | None = None) -> Tensor:
        """Cosine-type activation table [N, C]; eta is not applied here."""
        return self.normalized_features(feats) @ self.normalized_embeddings(rows).t()

    def euclidean_activations(self, feats: Tensor, rows: list[int] | None = None) -> Tensor:
        """-||w_bar - f_bar||^2 / 2 over the (augmented-)normalized vectors."""
        return self.activations(feats, rows) - 1.0


class IncrementalNet(nn.Module):
    def __init__(self, backbone: nn.Module, normalization: str = "rectified_cosine"):
        super().__init__()
        self.backbone = backbone
        self.head = CosineHead(backbone.feature_dim, normalization)

    def features(self, x: Tensor) -> Tensor:
        return self.backbone(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.head.activations(self.features(x))


class ModelSnapshot:
    """Frozen deep copy of the model at the start of a phase."""

    def __init__(self, model: IncrementalNet):
        self.model = copy.deepcopy(model)
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    @property
    def head(self) -> CosineHead:
        return self.model.head

    @property
    def class_ids(self) -> list[int]:
        return list(self.model.head.class_ids)

    @torch.no_grad()
    def features(self, x: Tensor) -> Tensor:
        return self.model.features(x)

    @torch.no_grad()
    def activations(self, x: Tensor, rows: list[int] | None = None) -> Tensor:
        return self.model.head.activations(self.model.features(x), rows)


def snapshot(model: IncrementalNet) -> ModelSnapshot:
    return ModelSnapshot(model)


def extend_head(model: IncrementalNet, new_classes: list[int],
                generator: torch.Generator | None = None) -> IncrementalNet:
    model.head.extend(new_classes, generator)
    return model


def _distillation_terms(loss_name: str, model: IncrementalNet,
                        snap: ModelSnapshot, inputs: Tensor, feats: Tensor) -> Tensor:
    """Per-example distillation loss over the snapshot's classes."""
    spec = DISTILLATION_SPECS[loss_name]()
    old_ids = snap.class_ids
    old_rows_new = model.head.rows_for(old_ids)
    old_rows_snap = snap.head.rows_for(old_ids)
    if spec.activation_kind == "euclidean":
        with torch.no_grad():
            a_star = snap.head.euclidean_activations(snap.features(inputs), old_rows_snap)
        a_new = model.head.euclidean_activations(feats, old_rows_new)
    else:
        a_star = snap.activations(inputs, old_rows_snap)
        a_new = model.head.activations(feats, old_rows_new)
    edge_snap = EdgeSnapshot.from_activations(spec, a_star)
    return general_distillation(spec, edge_snap, a_new)


def train_phase(model: IncrementalNet, data: ArrayDataset, state,
                snap: ModelSnapshot | None, loss_name: str,
                schedule: OptimizerSchedule, seed: int = 0,
                lambda_schedule: LambdaSchedule = LambdaSchedule()) -> list[float]:
    """Optimize the combined objective for one phase; returns per-epoch losses."""
    if len(data) == 0:
        raise ContractError("empty phase data")
    if loss_name != "none" and loss_name not in DISTILLATION_SPECS:
        raise ConfigError(f"unknown loss preset {loss_name!r}")
    lam = lambda_value(lambda_schedule, state) if loss_name != "none" else 0.0
    if lam > 0.0 and snap is None:
        raise ConfigError("distillation requires a snapshot after the first phase")

    rows = model.head.rows_for(sorted(state.C_all))
    row_of = torch.full((max(model.head.class_ids) + 1,), -1, dtype=torch.long)
    for r, c in enumerate(sorted(state.C_all)):
        row_of[c] = r

    opt = torch.optim.SGD(model.parameters(), lr=schedule.learning_rate,
                          momentum=schedule.momentum,
                          weight_decay=schedule.weight_decay)
    epoch_losses: list[float] = []
    model.train()
    for epoch in range(schedule.epochs):
        for group in opt.param_groups:
            group["lr"] = schedule.lr_at(epoch)
        gen = torch.Generator().manual_seed(hash((seed, state.phase_index, epoch)) % 2 ** 31)
        perm = torch.randperm(len(data), generator=gen)
        total, count = 0.0, 0
        for start in range(0, len(data), schedule.batch_size):
            idx = perm[start:start + schedule.batch_size]
            inputs, labels = data.inputs[idx], data.labels[idx]
            feats = model.features(inputs)
            acts = model.head.activations(feats, rows)
            dist = None
            if lam > 0.0:
                dist = _distillation_terms(loss_name, model, snap, inputs, feats)
            loss = losses.total_objective(acts, row_of[labels], model.head.eta,
                                          lam=lam, distillation=dist)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
    model.eval()
    return epoch_losses


@torch.no_grad()
def _batched_features(model, inputs: Tensor, batch: int = 256) -> Tensor:
    outs = [model.features(inputs[i:i + batch]) for i in range(0, len(inputs), batch)]
    return torch.cat(outs)


@torch.no_grad()
def nme_means(model: IncrementalNet, store: ExemplarStore,
              renormalize: bool = True) -> tuple[list[int], Tensor]:
    feats = {c: _batched_features(model, store.examples_of(c).inputs)
             for c in store.classes()}
    return class_means(feats, renormalize=renormalize)


@torch.no_grad()
def evaluate_groups(model: IncrementalNet, test: ArrayDataset,
                    groups: list[tuple[int, ...]], store: ExemplarStore | None,
                    renormalize_means: bool = True) -> tuple[list[float], dict[int, float]]:
    """Accuracy per phase group (and per class) on the test split.

    Uses nearest-mean-of-exemplars when a store is available; falls back to
    head argmax for memory-free baselines.
    """
    model.eval()
    seen = [c for g in groups for c in g]
    subset = test.restrict(seen)
    feats = _batched_features(model, subset.inputs)
    if store is not None and len(store) > 0:
        ids, means = nme_means(model, store, renormalize_means)
        preds = nme_classify(normalize(feats), ids, means)
    else:
        rows = model.head.rows_for(seen)
        acts = model.head.activations(feats, rows)
        preds = torch.as_tensor(seen)[acts.argmax(dim=1)]
    correct = preds == subset.labels
    group_accs = []
    per_class = {}
    for g in groups:
        mask = torch.zeros(len(subset), dtype=torch.bool)
        for c in g:
            cmask = subset.labels == c
            mask |= cmask
            per_class[c] = float(correct[cmask].float().mean()) if cmask.any() else 0.0
        group_accs.append(float(correct[mask].float().mean()))
    return group_accs, per_class


DEFAULT_CONFIG = {
    "dataset": "digits",
    "data_root": None,
    "backbone": "small-cnn",
    "normalization": "rectified_cosine",
    "loss": "wE",
    "classes_per_phase": 2,
    "pretrain_class_count": 0,
    "memory": 100,
    "seed": 0,
    "lambda_base": 0.1,
    "renormalize_means": True,
    "learning_rate": 0.1,
    "decay_epochs": [],
    "decay_factor": 5.0,
    "epochs": 10,
    "batch_size": 128,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "output_dir": None,
}


def resolve_config(config: dict) -> dict:
    unknown = set(config) - set(DEFAULT_CONFIG) - {"seeds"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolved = {**DEFAULT_CONFIG, **config}
    if resolved["loss"] != "none" and resolved["loss"] not in DISTILLATION_SPECS:
        raise ConfigError(f"unknown loss preset {resolved['loss']!r} (field: loss)")
    if resolved["memory"] < 0:
        raise ConfigError("memory must be >= 0 (field: memory)")
    return resolved


def run_incremental(config: dict, run_dir: str | Path | None = None
                    ) -> tuple[AccuracyMatrix, dict]:
    """Execute every phase of one configured run; returns matrix and report."""
    cfg = resolve_config(config)
    train, test, num_classes = get_dataset(cfg["dataset"], cfg["data_root"])
    seed = int(cfg["seed"])
    torch.manual_seed(seed)
    schedule = build_schedule(num_classes, cfg["classes_per_phase"],
                              cfg["pretrain_class_count"], seed)
    opt_schedule = OptimizerSchedule(
        learning_rate=cfg["learning_rate"], decay_epochs=tuple(cfg["decay_epochs"]),
        decay_factor=cfg["decay_factor"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"])
    lam_schedule = LambdaSchedule(cfg["lambda_base"])
    in_channels = train.inputs.shape[1]
    model = IncrementalNet(build_backbone(cfg["backbone"], in_channels),
                           cfg["normalization"])
    store = ExemplarStore(cfg["memory"], train) if cfg["memory"] > 0 else None

    matrix = AccuracyMatrix()
    loss_log: list[tuple[int, int, float]] = []
    per_class_rows: list[dict[int, float]] = []
    gen = torch.Generator().manual_seed(seed)
    for j in range(schedule.num_phases):
        pool, state = phase_data(schedule, j, train, store)
        snap = snapshot(model) if j > 0 else None
        extend_head(model, sorted(state.C_new), gen)
        epoch_losses = train_phase(model, pool, state, snap, cfg["loss"],
                                   opt_schedule, seed, lam_schedule)
        loss_log.extend((j, e, l) for e, l in enumerate(epoch_losses))
        if store is not None:
            store.rebalance(len(state.C_all))
            quota = store.quota(len(state.C_all))
            for c in sorted(state.C_new):
                cand_idx = train.indices_of([c])
                feats = normalize(_batched_features(model, train.inputs[cand_idx]))
                picks = herd_select(feats, min(quota, len(cand_idx)))
                store.add_class(c, [int(cand_idx[p]) for p in picks])
        groups = [schedule.phase_groups[i] for i in range(j + 1)]
        accs, per_class = evaluate_groups(model, test, groups, store,
                                          cfg["renormalize_means"])
        new_size = len(test.indices_of(schedule.phase_groups[j]))
        matrix.append_row(accs, new_size)
        per_class_rows.append(per_class)

    report = metrics_report(matrix)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(cfg, indent=2))
        (run_dir / "schedule.json").write_text(schedule.to_json())
        matrix.save_csv(run_dir / "accuracy_matrix.csv")
        with open(run_dir / "loss_log.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phase", "epoch", "mean_loss"])
            writer.writerows(loss_log)
        with open(run_dir / "per_class_accuracy.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            classes = sorted(per_class_rows[-1])
            writer.writerow(["phase"] + [str(c) for c in classes])
            for j, row in enumerate(per_class_rows):
                writer.writerow([j] + [f"{row[c]:.6f}" if c in row else ""
                                       for c in classes])
        if store is not None:
            store.save(run_dir / "exemplars.json")
        torch.save(model.state_dict(), run_dir / "model.pt")
        save_report(report, run_dir / "metrics.json")
    return matrix, report
