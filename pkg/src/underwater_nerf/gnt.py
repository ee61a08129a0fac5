"""Transformer renderer: view (epipolar cross-attention) and ray (self-attention) blocks
stacked alternately, mean pooling to a ray feature, and convolutional patch heads.

``volume_render_reference`` is the classical density-based quadrature, kept as
the NeRF baseline path and as a test reference.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .formation import _like, _to_tensor

FAR_DELTA = 1e10


class VisibilityError(ValueError):
    """Every key of some attention query is masked out."""


@dataclass(frozen=True)
class TransformerConfig:
    dim: int = 64
    view_heads: int = 1
    ray_heads: int = 4
    ff_hidden: int = 256
    depth: int = 4
    samples_per_ray: int = 192
    patch_size: int = 4
    decoder_width: int = 32
    pos_encoding: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.dim % self.ray_heads or self.dim % self.view_heads:
            raise ValueError(f"dim {self.dim} must be divisible by the head counts")
        if self.patch_size not in (2, 4, 8):
            raise ValueError(f"patch_size must be 2, 4 or 8, got {self.patch_size}")
        if self.samples_per_ray < 1:
            raise ValueError("samples_per_ray must be >= 1")


def attention(queries, keys, values, mask=None, heads=1, allow_empty=False, return_weights=False):
    """Scaled dot-product attention over the second-to-last axis.

    ``queries`` (..., Lq, D), ``keys`` (..., Lk, D), ``values`` (..., Lk, Dv);
    ``mask`` is a bool tensor broadcastable to (..., Lq, Lk), true for usable
    keys. A query with no usable key raises ``VisibilityError`` unless
    ``allow_empty``, in which case its output is zero.
    """
    if keys.shape[-2] != values.shape[-2]:
        raise ValueError("keys and values must have the same count")
    D, Dv = queries.shape[-1], values.shape[-1]
    if D % heads or Dv % heads:
        raise ValueError(f"width {D}/{Dv} not divisible by {heads} heads")

    def split(x):
        return x.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads)).transpose(-3, -2)

    q, k, v = split(queries), split(keys), split(values)
    logits = q @ k.transpose(-1, -2) / math.sqrt(D // heads)
    if mask is not None:
        mask = mask.unsqueeze(-3)  # broadcast over heads
        empty = ~mask.any(dim=-1, keepdim=True)
        if empty.any() and not allow_empty:
            raise VisibilityError("a query has no visible keys")
        logits = logits.masked_fill(~mask, float("-inf"))
        logits = logits.masked_fill(empty, 0.0)
        weights = torch.softmax(logits, dim=-1).masked_fill(empty, 0.0)
    else:
        weights = torch.softmax(logits, dim=-1)
    out = (weights @ v).transpose(-3, -2)
    out = out.reshape(out.shape[:-2] + (Dv,))
    return (out, weights) if return_weights else out


class FeedForward(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return x + self.fc2(F.relu(self.fc1(self.norm(x))))


class ViewBlock(nn.Module):
    """Cross-attention from a point token to its N epipolar features."""

    def __init__(self, dim, d_feat, ff_hidden, heads=1):
        super().__init__()
        self.heads = heads
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(d_feat)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(d_feat, dim)
        self.v = nn.Linear(d_feat, dim)
        self.o = nn.Linear(dim, dim)
        self.ff = FeedForward(dim, ff_hidden)
        self.last_weights = None

    def forward(self, x, feats, mask):
        """x (P, dim), feats (P, N, d_feat), mask (P, N) -> (P, dim)."""
        kv = self.norm_kv(feats)
        q = self.q(self.norm_q(x))[:, None, :]
        out, self.last_weights = attention(
            q, self.k(kv), self.v(kv), mask[:, None, :], self.heads, allow_empty=True, return_weights=True
        )
        x = x + self.o(out[:, 0])
        return self.ff(x)


class RayBlock(nn.Module):
    """Multi-head self-attention along the samples of each ray."""

    def __init__(self, dim, ff_hidden, heads=4):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.o = nn.Linear(dim, dim)
        self.ff = FeedForward(dim, ff_hidden)
        self.last_weights = None

    def forward(self, x, alive=None):
        """x (R, M, dim); ``alive`` (R, M) masks points that no source view sees."""
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=-1)
        mask = None if alive is None else alive[:, None, :]
        out, self.last_weights = attention(q, k, v, mask, self.heads, return_weights=True)
        x = x + self.o(out)
        return self.ff(x)


class GNTRenderer(nn.Module):
    """Maps epipolar features of the M samples on each ray to one ray feature."""

    def __init__(self, config, d_feat):
        super().__init__()
        self.config = config
        dim = config.dim
        self.dir_proj = nn.Linear(3, dim)
        self.query_init = nn.Linear(d_feat + dim, dim)
        self.view_blocks = nn.ModuleList(
            ViewBlock(dim, d_feat, config.ff_hidden, config.view_heads) for _ in range(config.depth)
        )
        self.ray_blocks = nn.ModuleList(RayBlock(dim, config.ff_hidden, config.ray_heads) for _ in range(config.depth))
        self.pos_embed = nn.Parameter(torch.zeros(config.samples_per_ray, dim)) if config.pos_encoding else None
        self.norm_out = nn.LayerNorm(dim)
        self.out1 = nn.Linear(dim, dim)
        self.out2 = nn.Linear(dim, dim)

    def initial_tokens(self, feats, mask, dirs):
        """Mean of the visible epipolar features joined with a direction encoding."""
        m = mask.to(feats.dtype)[..., None]
        mean = (feats * m).sum(-2) / m.sum(-2).clamp(min=1.0)
        d = self.dir_proj(dirs)
        d = d.reshape(d.shape[:-1] + (1,) * (mean.ndim - d.ndim) + d.shape[-1:]).expand(mean.shape[:-1] + d.shape[-1:])
        return self.query_init(torch.cat([mean, d], dim=-1))

    def view_aggregate(self, feats, mask, dirs, tokens=None, block=0):
        """Point features (P, dim) from epipolar features (P, N, d_feat) of P points."""
        if not mask.any(dim=-1).all():
            raise VisibilityError("a point is not visible in any source view")
        if tokens is None:
            tokens = self.initial_tokens(feats, mask, dirs)
        return self.view_blocks[block](tokens, feats, mask)

    def forward(self, feats, mask, dirs, strict=True):
        """feats (R, M, N, d_feat), mask (R, M, N), ray directions (R, 3) -> (R, dim).

        A ray whose samples no source view sees raises ``VisibilityError``; with
        ``strict=False`` such a ray keeps all its samples alive instead, so its
        output depends on the direction encoding alone.
        """
        R, M, N, C = feats.shape
        alive = mask.any(dim=-1)
        dead = ~alive.any(dim=-1)
        if dead.any():
            if strict:
                raise VisibilityError("a ray has no sample visible in any source view")
            alive = alive | dead[:, None]
        x = self.initial_tokens(feats, mask, dirs)
        flat_feats, flat_mask = feats.reshape(R * M, N, C), mask.reshape(R * M, N)
        for b, (view, ray) in enumerate(zip(self.view_blocks, self.ray_blocks)):
            x = view(x.reshape(R * M, -1), flat_feats, flat_mask).reshape(R, M, -1)
            if b == 0 and self.pos_embed is not None:
                if M != self.pos_embed.shape[0]:
                    raise ValueError(f"renderer was built for {self.pos_embed.shape[0]} samples per ray, got {M}")
                x = x + self.pos_embed
            x = ray(x, alive)
        return self.ray_aggregate_output(x, alive)

    def ray_aggregate_output(self, x, alive=None):
        """Mean over the visible samples followed by the output MLP."""
        if alive is None:
            pooled = x.mean(dim=1)
        else:
            a = alive.to(x.dtype)[..., None]
            pooled = (x * a).sum(1) / a.sum(1)
        return self.out2(F.relu(self.out1(self.norm_out(pooled))))


class PatchDecoder(nn.Module):
    """Three separate heads turning a ray feature into p x p maps for J, T_D and T_B."""

    HEADS = ("J", "T_D", "T_B")

    def __init__(self, dim, patch_size, width=32):
        super().__init__()
        stages = int(round(math.log2(patch_size)))
        if 2**stages != patch_size:
            raise ValueError(f"patch_size must be a power of two, got {patch_size}")
        self.patch_size = patch_size
        self.heads = nn.ModuleDict()
        for name in self.HEADS:
            layers, cin = [], dim
            for _ in range(stages):
                layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(cin, width, 3, padding=1), nn.ReLU()]
                cin = width
            layers.append(nn.Conv2d(cin, 3, 1))
            self.heads[name] = nn.Sequential(*layers)

    def forward(self, ray_features):
        """(R, dim) -> dict of raw (R, 3, p, p) maps, one per component."""
        seed = ray_features[:, :, None, None]
        return {name: head(seed) for name, head in self.heads.items()}


def volume_render_reference(colors, sigmas, depths):
    """Quadrature of the volume rendering integral along one or many rays.

    ``colors`` (..., M, 3), ``sigmas`` (..., M) and sorted ``depths`` (..., M);
    the last interval is capped at 1e10. Returns (color (..., 3), weights (..., M)).
    """
    (c, numpy_in), (s, _), (t, _) = (_to_tensor(x) for x in (colors, sigmas, depths))
    if (s < 0).any():
        raise ValueError("densities must be nonnegative")
    if (t[..., 1:] < t[..., :-1]).any():
        raise ValueError("depths must be sorted")
    delta = torch.cat([t[..., 1:] - t[..., :-1], torch.full_like(t[..., :1], FAR_DELTA)], dim=-1)
    tau = s * delta
    alpha = 1.0 - torch.exp(-tau)
    # transmittance before sample j: exp(-sum_{i<j} tau_i)
    trans = torch.exp(-torch.cumsum(torch.cat([torch.zeros_like(tau[..., :1]), tau[..., :-1]], dim=-1), dim=-1))
    weights = alpha * trans
    color = (weights[..., None] * c).sum(dim=-2)
    return _like(color, numpy_in), _like(weights, numpy_in)
