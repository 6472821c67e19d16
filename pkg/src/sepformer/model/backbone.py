"""Small from-scratch residual CNN producing stride 8/16/32 feature maps."""

from __future__ import annotations

from torch import nn

from ..numerics import Tensor


def group_norm(channels: int) -> nn.GroupNorm:
    # at least two channels per group so a 1×1 map still normalizes
    groups = 8 if channels % 8 == 0 and channels >= 16 else 1
    return nn.GroupNorm(groups, channels)


def conv_norm(cin: int, cout: int, k: int, stride: int = 1, act: bool = True) -> nn.Sequential:
    layers = [nn.Conv2d(cin, cout, k, stride, k // 2, bias=False), group_norm(cout)]
    if act:
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = conv_norm(cin, cout, 3, stride)
        self.conv2 = conv_norm(cout, cout, 3, act=False)
        self.shortcut = conv_norm(cin, cout, 1, stride, act=False)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.conv2(self.conv1(x)) + self.shortcut(x))


class Backbone(nn.Module):
    """7×7 stride-2 stem and max-pool, then three stride-2 residual stages."""

    def __init__(self, stem_width: int, widths: tuple[int, int, int]):
        super().__init__()
        self.stem = nn.Sequential(conv_norm(3, stem_width, 7, 2),
                                  nn.MaxPool2d(3, 2, 1))
        stages = []
        cin = stem_width
        for w in widths:
            stages.append(nn.Sequential(ResidualBlock(cin, w, 2), ResidualBlock(w, w, 1)))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.widths = tuple(widths)

    def forward(self, images: Tensor) -> list[Tensor]:
        h, w = images.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"image size {h}×{w} is not divisible by 32")
        x = self.stem(images)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats
