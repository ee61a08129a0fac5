"""Per-view convolutional features and bilinear lookup at projected points.

Grid node ``g`` of a feature grid with stride ``s`` sits at image pixel
``g * s + (s - 1) / 2``, which is where the center of the ``s x s`` block it
summarizes lies under the pixel-center convention.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .validation import check_divisible, check_image

ENCODER_STRIDE = 16
OUTPUT_STRIDE = 4


@dataclass(frozen=True)
class BackboneConfig:
    encoder_depth: str = "tiny"
    feature_width: int = 32
    tiny_width: int = 16
    upsample_stages: int = 2

    def __post_init__(self):
        if self.encoder_depth not in ("full", "tiny"):
            raise ValueError(f"encoder_depth must be 'full' or 'tiny', got {self.encoder_depth!r}")
        if self.feature_width < 4:
            raise ValueError(f"feature_width must be >= 4, got {self.feature_width}")
        if not 1 <= self.tiny_width <= 16:
            raise ValueError(f"tiny_width must be in [1, 16], got {self.tiny_width}")
        if self.upsample_stages != 2:
            raise ValueError("the decoder always has two upsampling stages")

    @property
    def out_channels(self):
        return self.feature_width + 3


@dataclass(eq=False)
class FeatureGrid:
    """Channel-first features ``data`` of shape (d_feat, H / stride, W / stride)."""

    data: torch.Tensor
    stride: int
    source_id: object = None

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError("stride must be positive")


def _conv(cin, cout, stride=1, k=3):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2)


class _BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = _conv(cin, cout, stride)
        self.norm1 = nn.InstanceNorm2d(cout, affine=True)
        self.conv2 = _conv(cout, cout)
        self.norm2 = nn.InstanceNorm2d(cout, affine=True)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride), nn.InstanceNorm2d(cout, affine=True))

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + (x if self.down is None else self.down(x)))


def _res_layer(cin, cout, blocks, stride):
    layers = [_BasicBlock(cin, cout, stride)]
    layers += [_BasicBlock(cout, cout, 1) for _ in range(blocks - 1)]
    return nn.Sequential(*layers)


class FeatureNet(nn.Module):
    """U-Net style extractor: encoder to 1/16, two x2 decoder stages with skips, output at 1/4."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config or BackboneConfig()
        cfg = self.config
        if cfg.encoder_depth == "tiny":
            w = cfg.tiny_width
            self.stage1 = nn.Sequential(_conv(3, w, 2), nn.ReLU(), _conv(w, w, 2), nn.ReLU())
            self.stage2 = nn.Sequential(_conv(w, w, 2), nn.ReLU())
            self.stage3 = nn.Sequential(_conv(w, w, 2), nn.ReLU())
            widths = (w, w, w)
        else:
            # ResNet34 layers 1-3 (3, 4, 6 basic blocks)
            self.stage1 = nn.Sequential(
                nn.Conv2d(3, 64, 7, stride=2, padding=3),
                nn.InstanceNorm2d(64, affine=True),
                nn.ReLU(),
                nn.MaxPool2d(3, stride=2, padding=1),
                _res_layer(64, 64, 3, 1),
            )
            self.stage2 = _res_layer(64, 128, 4, 2)
            self.stage3 = _res_layer(128, 256, 6, 2)
            widths = (64, 128, 256)
        self.up3 = _conv(widths[2] + widths[1], widths[1])
        self.up2 = _conv(widths[1] + widths[0], widths[0])
        self.out = nn.Conv2d(widths[0], cfg.feature_width, 1)

    def forward(self, images):
        """Images (V, 3, H, W) in [0, 1] -> features (V, feature_width + 3, H/4, W/4)."""
        check_divisible(images.shape[-2], images.shape[-1], ENCODER_STRIDE, "feature extraction")
        s1 = self.stage1(images)
        s2 = self.stage2(s1)
        s3 = self.stage3(s2)
        x = F.interpolate(s3, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.relu(self.up3(torch.cat([x, s2], dim=1)))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.relu(self.up2(torch.cat([x, s1], dim=1)))
        rgb = F.avg_pool2d(images, OUTPUT_STRIDE)
        return torch.cat([self.out(x), rgb], dim=1)


def image_to_tensor(image, dtype=torch.float64):
    """(H, W, 3) array -> (1, 3, H, W) tensor."""
    return torch.as_tensor(np.ascontiguousarray(image), dtype=dtype).permute(2, 0, 1)[None]


def extract_features(image, net, source_id=None):
    image = check_image(image)
    param = next(net.parameters())
    data = net(image_to_tensor(image, param.dtype))[0]
    if not torch.isfinite(data).all():
        raise FloatingPointError("feature grid contains NaN or Inf")
    return FeatureGrid(data, OUTPUT_STRIDE, source_id)


def sample_grids(data, pixels, image_size):
    """Bilinearly sample feature grids at image pixels.

    ``data`` is (V, C, h, w), ``pixels`` (V, P, 2) in image pixel units and
    ``image_size`` the (H, W) of the image the grid came from. Returns
    (V, P, C) features and a (V, P) validity mask; out-of-image points are
    clamped to the border and flagged invalid.
    """
    H, W = image_size
    u, v = pixels[..., 0], pixels[..., 1]
    # align_corners=False puts node g at pixel g * s + (s - 1) / 2
    grid = torch.stack([(2.0 * u + 1.0) / W - 1.0, (2.0 * v + 1.0) / H - 1.0], dim=-1)
    out = F.grid_sample(data, grid[:, :, None, :], mode="bilinear", padding_mode="border", align_corners=False)
    valid = (u >= -0.5) & (u <= W - 0.5) & (v >= -0.5) & (v <= H - 0.5)
    return out[..., 0].transpose(1, 2), valid


def bilinear_sample(grid, z):
    """Feature vector at image pixel ``z`` and whether ``z`` fell inside the grid."""
    C, h, w = grid.data.shape
    pix = torch.as_tensor(np.asarray(z, dtype=np.float64), dtype=grid.data.dtype).reshape(1, 1, 2)
    feats, valid = sample_grids(grid.data[None], pix, (h * grid.stride, w * grid.stride))
    return feats[0, 0], bool(valid[0, 0])
