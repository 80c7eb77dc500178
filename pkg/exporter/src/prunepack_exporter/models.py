"""Model registry: torchvision classifiers plus small deterministic toys."""

from __future__ import annotations

import torch
from torch import nn


class ToyConv(nn.Module):
    """Single conv, pool, classifier. The smallest exportable network."""

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 8, kernel_size=3, padding=1)
        self.relu = nn.ReLU()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(8, 4)

    def forward(self, x):
        x = self.relu(self.conv(x))
        x = torch.flatten(self.pool(x), 1)
        return self.fc(x)


class ToyMBConv(nn.Module):
    """Stem, one inverted-residual block with squeeze-excitation, head, classifier."""

    def __init__(self, c0=16, expand=64, reduce=8):
        super().__init__()
        self.stem = nn.Conv2d(3, c0, kernel_size=3, padding=1)
        self.pw_expand = nn.Conv2d(c0, expand, kernel_size=1)
        self.dw = nn.Conv2d(expand, expand, kernel_size=3, padding=1, groups=expand)
        self.se_pool = nn.AdaptiveAvgPool2d(1)
        self.se_reduce = nn.Conv2d(expand, reduce, kernel_size=1)
        self.se_act = nn.ReLU()
        self.se_expand = nn.Conv2d(reduce, expand, kernel_size=1)
        self.gate = nn.Sigmoid()
        self.pw_project = nn.Conv2d(expand, c0, kernel_size=1)
        self.head = nn.Conv2d(c0, 32, kernel_size=1)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(32, 10)

    def forward(self, x):
        x = self.stem(x)
        y = self.pw_expand(x)
        y = self.dw(y)
        s = self.gate(self.se_expand(self.se_act(self.se_reduce(self.se_pool(y)))))
        y = y * s
        y = self.pw_project(y)
        x = x + y
        x = self.head(x)
        x = torch.flatten(self.pool(x), 1)
        return self.fc(x)


class ToyResNet(nn.Module):
    """Two basic residual blocks sharing a skip chain, then a classifier."""

    def __init__(self, width=16):
        super().__init__()
        self.stem = nn.Conv2d(3, width, kernel_size=3, padding=1)
        self.b0_conv_a = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.b0_conv_b = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.b1_conv_a = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.b1_conv_b = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.relu = nn.ReLU()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(width, 10)

    def forward(self, x):
        x = self.stem(x)
        x = x + self.b0_conv_b(self.relu(self.b0_conv_a(x)))
        x = x + self.b1_conv_b(self.relu(self.b1_conv_a(x)))
        x = torch.flatten(self.pool(x), 1)
        return self.fc(x)


def build_model(name: str) -> nn.Module:
    if name == "resnet50":
        import torchvision

        return torchvision.models.resnet50(weights=None)
    if name == "resnet18":
        import torchvision

        return torchvision.models.resnet18(weights=None)
    if name == "toy_conv":
        return ToyConv()
    if name == "toy_mbconv":
        return ToyMBConv()
    if name == "toy_resnet":
        return ToyResNet()
    raise ValueError(f"unknown model {name!r}; choose from resnet50, resnet18, "
                     "toy_conv, toy_mbconv, toy_resnet")


DEFAULT_RESOLUTION = {
    "resnet50": 224,
    "resnet18": 224,
    "toy_conv": 16,
    "toy_mbconv": 16,
    "toy_resnet": 16,
}
