"""The full restoration field: feature extractor, transformer renderer, patch heads and light VAE."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import FeatureNet, sample_grids
from .formation import compose, map_raw_to_components
from .geometry import camera_rays, camera_tensors, project_points
from .gnt import GNTRenderer, PatchDecoder
from .lightnet import LightVAE


class GNTHead(nn.Module):
    def __init__(self, transformer_config, d_feat):
        super().__init__()
        self.renderer = GNTRenderer(transformer_config, d_feat)
        self.decoder = PatchDecoder(transformer_config.dim, transformer_config.patch_size, transformer_config.decoder_width)


@dataclass(eq=False)
class RayBatch:
    """Everything needed to render a set of patches of one target view."""

    target_index: object  # dataset index, or None for a novel pose
    source_indices: list
    nearest_index: int  # dataset index of the image fed to the light VAE
    patch_origins: np.ndarray  # (B, 2) top-left (row, col) on the stride-p grid
    origins: np.ndarray  # (B, 3)
    directions: np.ndarray  # (B, 3)
    depths: np.ndarray  # (B, M)
    target_patches: np.ndarray = None  # (B, p, p, 3)


def patch_centers(patch_origins, patch_size):
    """(u, v) pixel of each patch center under the pixel-center convention."""
    half = (patch_size - 1) / 2.0
    rows = patch_origins[:, 0] + half
    cols = patch_origins[:, 1] + half
    return np.stack([cols, rows], axis=-1).astype(np.float64)


def make_rays(camera, patch_origins, patch_size):
    return camera_rays(camera, patch_centers(patch_origins, patch_size))


def crop_patches(image, patch_origins, patch_size):
    """Gather (B, p, p, C) patches from an (H, W, C) array or tensor."""
    offs = np.arange(patch_size)
    rows = patch_origins[:, 0, None] + offs
    cols = patch_origins[:, 1, None] + offs
    if isinstance(image, torch.Tensor):
        rows, cols = torch.as_tensor(rows), torch.as_tensor(cols)
    return image[rows[:, :, None], cols[:, None, :]]


class RestorationField(nn.Module):
    def __init__(self, image_size, backbone_config, transformer_config, vae_config):
        super().__init__()
        self.image_size = tuple(image_size)
        self.patch_size = transformer_config.patch_size
        self.backbone = FeatureNet(backbone_config)
        self.gnt = GNTHead(transformer_config, backbone_config.out_channels)
        self.lightnet = LightVAE(self.image_size, vae_config)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def _images(self, dataset, indices):
        arr = np.stack([dataset.images[i] for i in indices])
        return torch.as_tensor(arr, dtype=self.dtype).permute(0, 3, 1, 2)

    def source_features(self, dataset, source_indices):
        return self.backbone(self._images(dataset, source_indices))

    def background_light(self, dataset, nearest_index, mode="train", generator=None, eta=None):
        A, mu, log_var, z = self.lightnet(self._images(dataset, [nearest_index]), mode, generator, eta)
        return A[0].permute(1, 2, 0), mu[0], log_var[0], z[0]

    def render_components(self, dataset, batch, features=None):
        """Raw-to-range mapped (J, T_D, T_B), each (B, p, p, 3)."""
        if features is None:
            features = self.source_features(dataset, batch.source_indices)
        dt = self.dtype
        cams = [dataset.cameras[i] for i in batch.source_indices]
        R, t, intr = camera_tensors(cams, dt)
        o = torch.as_tensor(batch.origins, dtype=dt)
        d = torch.as_tensor(batch.directions, dtype=dt)
        depths = torch.as_tensor(batch.depths, dtype=dt)
        points = o[:, None, :] + depths[..., None] * d[:, None, :]  # (B, M, 3)
        B, M = depths.shape
        V = len(cams)
        pixels, _, visible = project_points(points, R, t, intr)
        sampled, inside = sample_grids(features, pixels.reshape(V, B * M, 2), self.image_size)
        mask = (visible.reshape(V, B * M) & inside).reshape(V, B, M).permute(1, 2, 0)
        feats = sampled.reshape(V, B, M, -1).permute(1, 2, 0, 3)
        ray_feature = self.gnt.renderer(feats, mask, d, strict=False)
        raw = {k: v.permute(0, 2, 3, 1) for k, v in self.gnt.decoder(ray_feature).items()}
        return map_raw_to_components(raw["J"], raw["T_D"], raw["T_B"])

    def forward(self, dataset, batch, mode="train", generator=None, light=None):
        """Render a batch; returns a dict with components, A and the recomposed patches."""
        comps = self.render_components(dataset, batch)
        if light is None:
            light = self.background_light(dataset, batch.nearest_index, mode, generator)
        A_map, mu, log_var, _ = light
        A_patches = crop_patches(A_map, batch.patch_origins, self.patch_size)
        I = compose(comps, A_patches)
        return {
            "J": comps.J,
            "T_D": comps.T_D,
            "T_B": comps.T_B,
            "A": A_patches,
            "A_map": A_map,
            "I": I,
            "mu": mu,
            "log_var": log_var,
        }
