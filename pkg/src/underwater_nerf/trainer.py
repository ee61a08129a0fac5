"""Optimization loop, batch sampling, learning-rate schedule and checkpoints.

Checkpoint container (little-endian, one file)::

    b"UWNCKPT\\n"                 magic, 8 bytes
    uint32                       format version
    uint64                       header length L
    L bytes                      UTF-8 JSON header: config, step, rng state and
                                 an array table of {name, dtype, shape, offset, nbytes}
    array payload                raw C-order bytes, concatenated in table order
    32 bytes                     SHA-256 of everything above
"""

import dataclasses
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .backbone import BackboneConfig
from .geometry import sample_depths, select_source_views
from .gnt import TransformerConfig
from .lightnet import VaeConfig, nearest_source_index
from .losses import LossWeights, l_col, l_con, l_glob, l_kl, l_rec, l_trans, total_loss
from .model import RayBatch, RestorationField, crop_patches, make_rays

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"UWNCKPT\n"
CHECKPOINT_VERSION = 1
GROUPS = ("backbone", "model")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # architecture
    encoder_depth: str = "full"
    feature_width: int = 32
    tiny_width: int = 16
    dim: int = 64
    depth: int = 4
    view_heads: int = 1
    ray_heads: int = 4
    ff_hidden: int = 256
    samples_per_ray: int = 192
    patch_size: int = 4
    decoder_width: int = 32
    pos_encoding: bool = True
    latent_dim: int = 100
    # optimization
    steps: int = 250_000
    rays_per_batch: int = 512
    lr_backbone: float = 1e-3
    lr_model: float = 5e-4
    lr_final_factor: float = 0.1
    k_min: int = 1
    k_max: int = 3
    n_min: int = 8
    n_max: int = 12
    stratified: bool = True
    seed: int = 0
    dtype: str = "float32"
    # loss weights
    w_rec: float = 1.0
    w_con: float = 0.1
    w_col: float = 1.0
    w_kl: float = 1.0
    w_trans: float = 0.1
    w_glob: float = 0.1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        p2 = self.patch_size**2
        if self.rays_per_batch < p2 or self.rays_per_batch % p2:
            raise ValueError(f"rays_per_batch must be a positive multiple of patch_size^2 = {p2}")
        if not (self.lr_backbone >= 0 and self.lr_model >= 0):
            raise ValueError("learning rates must be nonnegative")
        if not 0 < self.lr_final_factor <= 1:
            raise ValueError("lr_final_factor must be in (0, 1]")
        if not (1 <= self.k_min <= self.k_max and 1 <= self.n_min <= self.n_max):
            raise ValueError("k and N ranges must be nonempty and positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        # construct sub-configs to surface their validation errors early
        self.backbone_config(), self.transformer_config(), self.vae_config(), self.loss_weights()

    def backbone_config(self):
        return BackboneConfig(self.encoder_depth, self.feature_width, self.tiny_width)

    def transformer_config(self):
        return TransformerConfig(
            dim=self.dim,
            view_heads=self.view_heads,
            ray_heads=self.ray_heads,
            ff_hidden=self.ff_hidden,
            depth=self.depth,
            samples_per_ray=self.samples_per_ray,
            patch_size=self.patch_size,
            decoder_width=self.decoder_width,
            pos_encoding=self.pos_encoding,
        )

    def vae_config(self):
        return VaeConfig(latent_dim=self.latent_dim)

    def loss_weights(self):
        return LossWeights(self.w_rec, self.w_con, self.w_col, self.w_kl, self.w_trans, self.w_glob)

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    @property
    def patches_per_batch(self):
        return self.rays_per_batch // self.patch_size**2

    @classmethod
    def finetune_defaults(cls, **overrides):
        base = dict(steps=50_000, rays_per_batch=256, lr_backbone=5e-4, lr_model=2e-4)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_strings(cls, mapping, base=None):
        """Build a config from string values (config files, CLI flags)."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in mapping.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _coerce(raw, types[key], key)
        return dataclasses.replace(base or cls(), **values)


def _coerce(raw, typ, key):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def learning_rate(lr0, step, total_steps, final_factor=0.1):
    """Exponential decay with lr(0) = lr0 and lr(total_steps) = final_factor * lr0."""
    return lr0 * final_factor ** (step / total_steps)


# --- batches ---------------------------------------------------------------------


def patch_grid(image_size, patch_size):
    H, W = image_size
    if H % patch_size or W % patch_size:
        raise ValueError(f"image size {H}x{W} is not divisible by patch size {patch_size}")
    rows, cols = np.mgrid[0:H:patch_size, 0:W:patch_size]
    return np.stack([rows.ravel(), cols.ravel()], axis=-1)


def build_batch(dataset, config, rng):
    """Sample a target view, its source views and a set of target patches."""
    n_views = len(dataset)
    if n_views < config.n_min + 1:
        raise ValueError(f"dataset has {n_views} views; need at least {config.n_min + 1}")
    target = int(rng.integers(n_views))
    k = int(rng.integers(config.k_min, config.k_max + 1))
    n = int(rng.integers(config.n_min, config.n_max + 1))
    n = min(n, n_views - 1)
    poses = dataset.poses
    sources = select_source_views(poses[target], poses, k, n, rng, exclude=(target,))
    nearest = sources[nearest_source_index(poses[target], [poses[i] for i in sources])]
    grid = patch_grid(dataset.image_shape, config.patch_size)
    n_patches = config.patches_per_batch
    if n_patches > len(grid):
        raise ValueError(f"batch asks for {n_patches} patches but a view only has {len(grid)}")
    origins = grid[np.sort(rng.choice(len(grid), size=n_patches, replace=False))]
    o, d = make_rays(dataset.cameras[target], origins, config.patch_size)
    depths = sample_depths(dataset.near, dataset.far, config.samples_per_ray, n_patches, config.stratified, rng)
    return RayBatch(
        target_index=target,
        source_indices=sources,
        nearest_index=nearest,
        patch_origins=origins,
        origins=o,
        directions=d,
        depths=depths,
        target_patches=crop_patches(dataset.images[target], origins, config.patch_size),
    )


# --- state -----------------------------------------------------------------------


def build_model(config, image_size):
    torch.manual_seed(config.seed)
    model = RestorationField(image_size, config.backbone_config(), config.transformer_config(), config.vae_config())
    return model.to(config.torch_dtype)


def build_optimizer(model, config):
    return torch.optim.Adam(
        [
            {"params": list(model.backbone.parameters()), "lr": config.lr_backbone, "name": "backbone"},
            {
                "params": list(model.gnt.parameters()) + list(model.lightnet.parameters()),
                "lr": config.lr_model,
                "name": "model",
            },
        ],
        betas=(0.9, 0.999),
        eps=1e-8,
    )


class TrainState:
    """Parameters, optimizer moments, step counter and random streams of one run."""

    def __init__(self, config, image_size, model=None):
        self.config = config
        self.image_size = tuple(image_size)
        self.model = model if model is not None else build_model(config, image_size)
        self.optimizer = build_optimizer(self.model, config)
        self.step = 0
        self.rng = np.random.default_rng(config.seed)
        self.generator = torch.Generator().manual_seed(config.seed)

    def learning_rates(self, step=None):
        step = self.step if step is None else step
        c = self.config
        return {
            "backbone": learning_rate(c.lr_backbone, step, c.steps, c.lr_final_factor),
            "model": learning_rate(c.lr_model, step, c.steps, c.lr_final_factor),
        }


def compute_losses(out, target_patches, weights):
    terms = {
        "rec": l_rec(out["I"], target_patches),
        "con": l_con(out["J"]),
        "col": l_col(out["J"]),
        "kl": l_kl(out["mu"], out["log_var"]),
        "trans": l_trans(out["T_B"]),
        "glob": l_glob(out["A_map"]),
    }
    return total_loss(terms, weights)


def train_step(state, dataset, batch):
    """One Adam step on ``batch``; returns the pre-update LossReport."""
    model = state.model
    model.train()
    state.optimizer.zero_grad(set_to_none=True)
    out = model(dataset, batch, mode="train", generator=state.generator)
    target = torch.as_tensor(batch.target_patches, dtype=model.dtype)
    report = compute_losses(out, target, state.config.loss_weights())
    report.total_tensor.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient for {name} at step {state.step}")
    lrs = state.learning_rates()
    for group in state.optimizer.param_groups:
        group["lr"] = lrs[group["name"]]
    state.optimizer.step()
    state.step += 1
    report.total_tensor = None
    return report


def log_record(step, report, lrs):
    record = {"step": step, **report.as_dict(), "lr_backbone": lrs["backbone"], "lr_model": lrs["model"]}
    return json.dumps(record)


def train(dataset, config=None, state=None, steps=None, log_file=None, callback=None):
    """Run ``steps`` iterations (default: until ``config.steps``); returns (state, reports)."""
    state = state or TrainState(config or TrainConfig(), dataset.image_shape)
    if tuple(dataset.image_shape) != state.image_size:
        raise ValueError(f"model built for {state.image_size} images, dataset has {dataset.image_shape}")
    end = state.config.steps if steps is None else state.step + steps
    reports = []
    while state.step < end:
        lrs = state.learning_rates()
        batch = build_batch(dataset, state.config, state.rng)
        report = train_step(state, dataset, batch)
        reports.append(report)
        if log_file is not None:
            log_file.write(log_record(state.step - 1, report, lrs) + "\n")
        if callback is not None and callback(state, report) is False:
            break
    return state, reports


# --- checkpoints -----------------------------------------------------------------


@dataclass(eq=False)
class Checkpoint:
    arrays: dict
    config: dict
    step: int = 0
    rng_state: dict = None
    image_size: tuple = None
    version: int = CHECKPOINT_VERSION


def _torch_to_numpy(t):
    return t.detach().cpu().contiguous().numpy().copy()


def state_to_checkpoint(state):
    arrays = {}
    for name, tensor in state.model.state_dict().items():
        arrays[name] = _torch_to_numpy(tensor)
    names = {id(p): n for n, p in state.model.named_parameters()}
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            st = state.optimizer.state.get(p)
            if not st:
                continue
            base = f"optim.{names[id(p)]}"
            arrays[f"{base}.exp_avg"] = _torch_to_numpy(st["exp_avg"])
            arrays[f"{base}.exp_avg_sq"] = _torch_to_numpy(st["exp_avg_sq"])
            arrays[f"{base}.step"] = np.asarray(float(st["step"]), dtype=np.float64).reshape(1)
    arrays["rng.torch"] = _torch_to_numpy(state.generator.get_state())
    return Checkpoint(
        arrays=arrays,
        config=asdict(state.config),
        step=state.step,
        rng_state=state.rng.bit_generator.state,
        image_size=tuple(state.image_size),
    )


def state_from_checkpoint(ckpt, config=None, restore_optimizer=True):
    """Rebuild a TrainState; ``config`` overrides the stored one (e.g. for fine-tuning)."""
    stored = TrainConfig(**ckpt.config)
    config = config or stored
    state = TrainState(config, ckpt.image_size)
    load_parameters(state.model, ckpt.arrays)
    if restore_optimizer:
        names = dict(state.model.named_parameters())
        for pname, p in names.items():
            base = f"optim.{pname}"
            if f"{base}.exp_avg" not in ckpt.arrays:
                continue
            state.optimizer.state[p] = {
                "step": torch.tensor(float(ckpt.arrays[f"{base}.step"][0])),
                "exp_avg": torch.as_tensor(ckpt.arrays[f"{base}.exp_avg"].copy()),
                "exp_avg_sq": torch.as_tensor(ckpt.arrays[f"{base}.exp_avg_sq"].copy()),
            }
        state.step = ckpt.step
        state.rng.bit_generator.state = ckpt.rng_state
        state.generator.set_state(torch.as_tensor(ckpt.arrays["rng.torch"].copy()))
    return state


def load_parameters(model, arrays):
    """Copy ``backbone.*``, ``gnt.*`` and ``lightnet.*`` arrays into ``model``; strict on shapes."""
    own = model.state_dict()
    mismatched = []
    for name, tensor in own.items():
        if name not in arrays:
            mismatched.append(f"{name}: missing")
        elif tuple(arrays[name].shape) != tuple(tensor.shape):
            mismatched.append(f"{name}: checkpoint {tuple(arrays[name].shape)} vs model {tuple(tensor.shape)}")
    if mismatched:
        raise CheckpointError("incompatible checkpoint entries:\n  " + "\n  ".join(mismatched))
    model.load_state_dict({name: torch.as_tensor(arrays[name].copy()) for name in own}, strict=True)


def _dtype_name(arr):
    return arr.dtype.newbyteorder("<").str


def checkpoint_bytes(ckpt):
    table, payload, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes(order="C")
        table.append({"name": name, "dtype": _dtype_name(arr), "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        payload.append(data)
        offset += len(data)
    header = {
        "config": ckpt.config,
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "image_size": list(ckpt.image_size) if ckpt.image_size is not None else None,
        "arrays": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<IQ", ckpt.version, len(header_bytes)) + header_bytes + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, ckpt):
    if isinstance(ckpt, TrainState):
        ckpt = state_to_checkpoint(ckpt)
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))
    return ckpt


def parse_checkpoint(blob):
    prefix = len(CHECKPOINT_MAGIC) + 12
    if len(blob) < prefix + 32:
        raise CheckpointError("checkpoint is truncated (checksum mismatch)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (file corrupted or truncated)")
    if body[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<IQ", body[len(CHECKPOINT_MAGIC) : prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})")
    header = json.loads(body[prefix : prefix + header_len].decode("utf-8"))
    data = body[prefix + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        chunk = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    image_size = tuple(header["image_size"]) if header["image_size"] is not None else None
    return Checkpoint(arrays, header["config"], header["step"], header["rng_state"], image_size, version)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def finetune(pretrained, dataset, config=None, steps=None, log_file=None):
    """Continue training ``pretrained`` on ``dataset`` with fresh optimizer state."""
    stored = TrainConfig(**pretrained.config)
    config = config or TrainConfig.finetune_defaults(
        **{k: v for k, v in asdict(stored).items() if k not in ("steps", "rays_per_batch", "lr_backbone", "lr_model")}
    )
    if tuple(dataset.image_shape) != tuple(pretrained.image_size):
        raise CheckpointError(
            f"incompatible checkpoint entries: lightnet expects {tuple(pretrained.image_size)} images, "
            f"scene has {tuple(dataset.image_shape)}"
        )
    model = build_model(config, dataset.image_shape)
    load_parameters(model, pretrained.arrays)
    state = TrainState(config, dataset.image_shape, model=model)
    state, _ = train(dataset, state=state, steps=steps, log_file=log_file)
    return state_to_checkpoint(state)


def n_parameters(model):
    return sum(p.numel() for p in model.parameters())


__all__ = [
    "Checkpoint",
    "CheckpointError",
    "TrainConfig",
    "TrainState",
    "build_batch",
    "finetune",
    "learning_rate",
    "load_checkpoint",
    "save_checkpoint",
    "state_from_checkpoint",
    "state_to_checkpoint",
    "train",
    "train_step",
]
