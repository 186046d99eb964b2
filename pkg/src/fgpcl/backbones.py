"""Feature extractor architectures.

Every backbone outputs raw features with no final nonlinearity, so the
cosine-style heads see the full feature space rather than the positive
orthant.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


class SmallCNN(nn.Module):
    """2 conv + 2 fc desk-scale extractor; input size agnostic via pooling."""

    def __init__(self, in_channels: int = 1, feature_dim: int = 64):
        super().__init__()
        self.feature_dim = feature_dim
        self.conv1 = nn.Conv2d(in_channels, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.fc1 = nn.Linear(32 * 16, 128)
        self.fc2 = nn.Linear(128, feature_dim)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.max_pool2d(x, 2)
        x = F.relu(self.conv2(x))
        x = self.pool(x)
        x = x.flatten(1)
        x = F.relu(self.fc1(x))
        return self.fc2(x)


class MnistToy(nn.Module):
    """2 conv + 3 fc with 3-dimensional feature output, for the toy study."""

    def __init__(self, in_channels: int = 1, feature_dim: int = 3):
        super().__init__()
        self.feature_dim = feature_dim
        self.conv1 = nn.Conv2d(in_channels, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.fc1 = nn.Linear(32 * 16, 64)
        self.fc2 = nn.Linear(64, 32)
        self.fc3 = nn.Linear(32, feature_dim)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.max_pool2d(x, 2)
        x = F.relu(self.conv2(x))
        x = self.pool(x)
        x = x.flatten(1)
        x = F.relu(self.fc1(x))
        x = F.relu(self.fc2(x))
        return self.fc3(x)


class _BasicBlock(nn.Module):
    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_planes != planes:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_planes, planes, 1, stride=stride, bias=False),
                nn.BatchNorm2d(planes))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet32(nn.Module):
    """32-layer CIFAR-style ResNet; last block output is the 64-d feature."""

    def __init__(self, in_channels: int = 3, feature_dim: int = 64):
        super().__init__()
        self.feature_dim = feature_dim
        self.conv1 = nn.Conv2d(in_channels, 16, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(16)
        layers = []
        in_planes = 16
        for planes, stride in ((16, 1), (32, 2), (64, 2)):
            for i in range(5):
                layers.append(_BasicBlock(in_planes, planes, stride if i == 0 else 1))
                in_planes = planes
        self.blocks = nn.Sequential(*layers)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = self.blocks(x)
        x = F.adaptive_avg_pool2d(x, 1)
        # no final ReLU: features may occupy the whole space
        return x.flatten(1)


def resnet18_features(in_channels: int = 3):
    import torchvision

    net = torchvision.models.resnet18(weights=None)
    if in_channels != 3:
        net.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2, padding=3, bias=False)
    net.fc = nn.Identity()
    net.feature_dim = 512
    return net


def build_backbone(name: str, in_channels: int = 1) -> nn.Module:
    builders = {
        "small-cnn": lambda: SmallCNN(in_channels),
        "mnist-toy": lambda: MnistToy(in_channels),
        "resnet32-class": lambda: ResNet32(in_channels),
        "resnet18-class": lambda: resnet18_features(in_channels),
    }
    if name not in builders:
        raise ConfigError(f"unknown backbone {name!r}; choose from {sorted(builders)}")
    return builders[name]()
