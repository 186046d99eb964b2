"""Dataset adapters producing in-memory train/test splits.

``digits`` (the scikit-learn 8x8 handwritten digits) needs no download and is
the default for desk-scale runs. ``mnist`` and ``cifar100`` read torchvision
datasets from a root directory (env var FGPCL_DATA_ROOT overrides the
configured root).
"""

from __future__ import annotations

import os

import numpy as np
import torch

from .data_stream import ArrayDataset
from .errors import ConfigError


def data_root(configured: str | None = None) -> str:
    return os.environ.get("FGPCL_DATA_ROOT", configured or "./data")


def load_digits_dataset(root: str | None = None) -> tuple[ArrayDataset, ArrayDataset]:
    from sklearn.datasets import load_digits
    from sklearn.model_selection import train_test_split

    bunch = load_digits()
    images = bunch.images.astype(np.float32) / 16.0  # [N, 8, 8], pixel range 0..16
    labels = bunch.target.astype(np.int64)
    xtr, xte, ytr, yte = train_test_split(
        images, labels, test_size=0.25, random_state=0, stratify=labels)
    return (
        ArrayDataset(torch.from_numpy(xtr).unsqueeze(1), torch.from_numpy(ytr)),
        ArrayDataset(torch.from_numpy(xte).unsqueeze(1), torch.from_numpy(yte)),
    )


def _torchvision_pair(cls_name: str, root: str, normalize_div: float = 255.0):
    try:
        import torchvision
    except ImportError as exc:
        raise ConfigError("torchvision is required for this dataset") from exc
    cls = getattr(torchvision.datasets, cls_name)
    try:
        train = cls(root, train=True, download=True)
        test = cls(root, train=False, download=True)
    except Exception as exc:
        raise IOError(f"{cls_name} not available under {root!r}: {exc}") from exc

    def to_arrays(ds):
        data = np.asarray(ds.data, dtype=np.float32) / normalize_div
        x = torch.from_numpy(data)
        if x.dim() == 3:
            x = x.unsqueeze(1)  # [N, 1, H, W]
        else:
            x = x.permute(0, 3, 1, 2)  # HWC -> CHW
        y = torch.as_tensor(ds.targets, dtype=torch.long)
        return ArrayDataset(x, y)

    return to_arrays(train), to_arrays(test)


def load_mnist_dataset(root: str | None = None):
    return _torchvision_pair("MNIST", data_root(root))


def load_cifar100_dataset(root: str | None = None):
    return _torchvision_pair("CIFAR100", data_root(root))


DATASETS = {
    "digits": (load_digits_dataset, 10),
    "mnist": (load_mnist_dataset, 10),
    "cifar100": (load_cifar100_dataset, 100),
}


def get_dataset(name: str, root: str | None = None) -> tuple[ArrayDataset, ArrayDataset, int]:
    """Returns (train, test, num_classes) for a registered dataset name."""
    if name not in DATASETS:
        raise ConfigError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)}")
    loader, num_classes = DATASETS[name]
    train, test = loader(root)
    return train, test, num_classes
