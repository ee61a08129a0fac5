"""Variational autoencoder that estimates the background light map A from one source image."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import image_to_tensor
from .formation import LOG_VAR_MAX, BackgroundLight
from .geometry import rank_by_nearness
from .validation import check_divisible, check_image

ENCODER_STRIDE = 16


@dataclass(frozen=True)
class VaeConfig:
    encoder_widths: tuple = (16, 32, 64, 128)
    latent_dim: int = 100
    decoder_widths: tuple = (128, 64, 32)

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if len(self.encoder_widths) != 4 or min(self.encoder_widths) < 1:
            raise ValueError("encoder needs four positive widths (four stride-2 stages)")
        if len(self.decoder_widths) != 3 or min(self.decoder_widths) < 1:
            raise ValueError("decoder needs three positive widths")


class LightVAE(nn.Module):
    """Encoder to 1/16 resolution, Gaussian latent, decoder back to full resolution.

    The latent is projected to a (H/16, W/16) seed with ``decoder_widths[0]``
    channels, so the network is tied to the image size it was built for.
    """

    def __init__(self, image_size, config=None):
        super().__init__()
        self.config = cfg = config or VaeConfig()
        H, W = image_size
        check_divisible(H, W, ENCODER_STRIDE, "background light estimation")
        self.image_size = (H, W)
        self.seed_size = (H // ENCODER_STRIDE, W // ENCODER_STRIDE)
        layers, cin = [], 3
        for width in cfg.encoder_widths:
            layers += [nn.Conv2d(cin, width, 3, stride=2, padding=1), nn.ReLU()]
            cin = width
        self.encoder = nn.Sequential(*layers)
        flat = cin * self.seed_size[0] * self.seed_size[1]
        self.fc_mu = nn.Linear(flat, cfg.latent_dim)
        self.fc_log_var = nn.Linear(flat, cfg.latent_dim)
        self.fc_seed = nn.Linear(cfg.latent_dim, cfg.decoder_widths[0] * self.seed_size[0] * self.seed_size[1])
        layers, cin = [], cfg.decoder_widths[0]
        for width in cfg.decoder_widths:
            layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(cin, width, 3, padding=1), nn.ReLU()]
            cin = width
        layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(cin, 3, 3, padding=1)]
        self.decoder = nn.Sequential(*layers)

    def encode(self, images):
        if tuple(images.shape[-2:]) != self.image_size:
            raise ValueError(f"expected images of size {self.image_size}, got {tuple(images.shape[-2:])}")
        h = self.encoder(images).flatten(1)
        return self.fc_mu(h), self.fc_log_var(h).clamp(max=LOG_VAR_MAX)

    def decode(self, z):
        seed = F.relu(self.fc_seed(z)).reshape(z.shape[0], -1, *self.seed_size)
        return torch.sigmoid(self.decoder(seed))

    def forward(self, images, mode="train", generator=None, eta=None):
        """Images (B, 3, H, W) -> (A (B, 3, H, W), mu, log_var, z)."""
        mu, log_var = self.encode(images)
        z = reparameterize(mu, log_var, mode, generator, eta)
        return self.decode(z), mu, log_var, z


def reparameterize(mu, log_var, mode="train", generator=None, eta=None):
    """z = mu + exp(log_var / 2) * eta with eta ~ N(0, I) in train mode, z = mu in eval mode."""
    if mode == "eval":
        return mu
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if eta is None:
        eta = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * log_var) * eta


def nearest_source_index(target, poses):
    """Index of the pose whose optical axis is closest to the target's (ties: center distance)."""
    if not poses:
        raise ValueError("need at least one source view")
    return rank_by_nearness(target, poses)[0]


def select_nearest_source(target, sources):
    """Image of the (pose, image) source nearest to the target view direction."""
    return sources[nearest_source_index(target, [pose for pose, _ in sources])][1]


def estimate_background_light(image, vae, mode="eval", generator=None, eta=None):
    image = check_image(image)
    param = next(vae.parameters())
    A, mu, log_var, z = vae(image_to_tensor(image, param.dtype), mode, generator, eta)
    return BackgroundLight(A[0].permute(1, 2, 0), mu[0], log_var[0], z[0])
