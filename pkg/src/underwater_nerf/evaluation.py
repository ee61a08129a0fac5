"""Rendering of whole views, scene evaluation reports and fly-through sequences."""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.spatial.transform import Rotation, Slerp

from .data_io import Pose, save_image
from .formation import ComponentPatch, compose
from .geometry import rank_by_nearness, sample_depths
from .losses import l_trans
from .metrics import PSNR_CAP, psnr, ssim, uciqe, uiqm
from .model import RayBatch, make_rays
from .trainer import Checkpoint, TrainConfig, build_model, load_parameters, patch_grid

COMPONENTS = ("J", "I", "T_D", "T_B", "A")


@dataclass
class RenderedView:
    J: np.ndarray
    I: np.ndarray
    T_D: np.ndarray
    T_B: np.ndarray
    A: np.ndarray
    source_indices: list = field(default_factory=list)

    def as_dict(self):
        return {name: getattr(self, name) for name in COMPONENTS}


def model_from_checkpoint(ckpt, dtype=None):
    config = TrainConfig(**ckpt.config)
    model = build_model(config, ckpt.image_size)
    load_parameters(model, ckpt.arrays)
    if dtype is not None:
        model = model.to(dtype)
    model.eval()
    return model, config


def _resolve(model):
    if isinstance(model, Checkpoint):
        return model_from_checkpoint(model)
    if isinstance(model, tuple):
        return model
    raise TypeError("expected a Checkpoint or a (model, TrainConfig) pair")


def eval_sources(dataset, target, n_sources, exclude_target=True):
    """Deterministic source set: the ``n_sources`` views nearest the target pose."""
    if isinstance(target, Pose):
        pose, exclude = target, ()
    else:
        pose, exclude = dataset.poses[target], ((target,) if exclude_target else ())
    ranked = rank_by_nearness(pose, dataset.poses, exclude=exclude)
    if len(ranked) < 1:
        raise ValueError("no source views available")
    return pose, ranked[:n_sources]


@torch.no_grad()
def render_view(model, dataset, target, n_sources=None, chunk=64, exclude_target=True):
    """Render a full view by tiling it with stride-p patches.

    ``target`` is a dataset index or a Pose (novel view, camera intrinsics of
    the nearest dataset view). The light map comes from the nearest source in
    eval mode (latent mean), so rendering is deterministic.
    """
    model, config = _resolve(model)
    if tuple(dataset.image_shape) != tuple(model.image_size):
        raise ValueError(f"model built for {tuple(model.image_size)} images, scene has {tuple(dataset.image_shape)}")
    model.eval()
    n_sources = n_sources or config.n_max
    pose, sources = eval_sources(dataset, target, n_sources, exclude_target)
    if isinstance(target, Pose):
        camera = (dataset.cameras[sources[0]][0], pose)
    else:
        camera = dataset.cameras[target]
    p = config.patch_size
    H, W = dataset.image_shape
    grid = patch_grid((H, W), p)
    features = model.source_features(dataset, sources)
    light = model.background_light(dataset, sources[0], mode="eval")
    out = {name: np.zeros((H, W, 3)) for name in ("J", "T_D", "T_B")}
    for start in range(0, len(grid), chunk):
        origins = grid[start : start + chunk]
        o, d = make_rays(camera, origins, p)
        depths = sample_depths(dataset.near, dataset.far, config.samples_per_ray, len(origins), stratified=False)
        batch = RayBatch(None, sources, sources[0], origins, o, d, depths)
        comps = model.render_components(dataset, batch, features)
        for name in out:
            maps = getattr(comps, name).double().numpy()
            for (r, c), patch in zip(origins, maps):
                out[name][r : r + p, c : c + p] = patch
    A = light[0].double().numpy()
    I = compose(ComponentPatch(out["J"], out["T_D"], out["T_B"]), A)
    return RenderedView(out["J"], I, out["T_D"], out["T_B"], A, list(sources))


@dataclass
class ViewMetrics:
    view_id: str
    psnr: float = None
    ssim: float = None
    uiqm: float = None
    uciqe: float = None
    psnr_self: float = None
    l_trans: float = None
    lpips: float = None


@dataclass
class MetricsReport:
    scene_id: str
    config_hash: str
    views: list

    def means(self):
        out = {}
        for key in ("psnr", "ssim", "uiqm", "uciqe", "psnr_self", "l_trans", "lpips"):
            vals = [getattr(v, key) for v in self.views if getattr(v, key) is not None]
            out[key] = float(np.mean(vals)) if vals else None
        return out

    def validate(self):
        for v in self.views:
            for key in ("psnr", "ssim", "uiqm", "uciqe", "psnr_self"):
                val = getattr(v, key)
                if val is not None and not np.isfinite(val):
                    raise ValueError(f"{v.view_id}: {key} is not finite")
            if v.psnr is not None and not 0 <= v.psnr <= PSNR_CAP:
                raise ValueError(f"{v.view_id}: PSNR {v.psnr} outside [0, cap]")
            if v.ssim is not None and not -1 <= v.ssim <= 1:
                raise ValueError(f"{v.view_id}: SSIM {v.ssim} outside [-1, 1]")
        return self

    def to_jsonl(self):
        lines = [json.dumps({"type": "view", "scene": self.scene_id, **asdict(v)}) for v in self.views]
        lines.append(
            json.dumps({"type": "summary", "scene": self.scene_id, "config_hash": self.config_hash, **self.means()})
        )
        return "\n".join(lines) + "\n"

    def summary_table(self):
        keys = ("psnr", "ssim", "uiqm", "uciqe", "psnr_self")
        rows = [f"{'view':<20}" + "".join(f"{k:>11}" for k in keys)]
        for v in self.views + [ViewMetrics("mean", **self.means())]:
            cells = "".join(f"{getattr(v, k):>11.4f}" if getattr(v, k) is not None else f"{'-':>11}" for k in keys)
            rows.append(f"{v.view_id:<20}" + cells)
        return "\n".join(rows)


def config_hash(config):
    text = json.dumps(asdict(config) if not isinstance(config, dict) else config, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def read_external_scores(path):
    """Per-view scores from an external perceptual metric: lines of ``view_id score``."""
    scores = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'view_id score'")
            scores[parts[0]] = float(parts[1])
    return scores


def image_patches(image, patch_size):
    """(H, W, C) -> (n, p, p, C) tiles on the stride-p grid."""
    H, W, C = image.shape
    p = patch_size
    return image.reshape(H // p, p, W // p, p, C).swapaxes(1, 2).reshape(-1, p, p, C)


def score_view(view_id, rendered, degraded, clean=None, external=None, patch_size=4):
    m = ViewMetrics(view_id)
    J = np.clip(rendered.J, 0.0, 1.0)
    if clean is not None:
        m.psnr = psnr(J, clean)
        m.ssim = ssim(J, clean)
    m.uiqm = uiqm(J)
    m.uciqe = uciqe(J)
    m.psnr_self = psnr(np.clip(rendered.I, 0.0, 1.0), degraded)
    m.l_trans = float(l_trans(torch.as_tensor(image_patches(rendered.T_B, patch_size))))
    if external is not None:
        m.lpips = external.get(str(view_id))
    return m


def evaluate_scene(model, dataset, view_indices=None, out_path=None, external_scores=None, scene_id="scene"):
    """Render the held-out views and score them; optionally write a JSONL report."""
    model_pair = _resolve(model)
    _, config = model_pair
    indices = range(len(dataset)) if view_indices is None else view_indices
    external = read_external_scores(external_scores) if isinstance(external_scores, (str, os.PathLike)) else external_scores
    views = []
    for i in indices:
        rendered = render_view(model_pair, dataset, i)
        clean = dataset.ground_truth.clean[i] if dataset.ground_truth is not None else None
        views.append(score_view(dataset.view_ids[i], rendered, dataset.images[i], clean, external, config.patch_size))
    report = MetricsReport(scene_id, config_hash(config), views).validate()
    if out_path is not None:
        with open(out_path, "w") as fh:
            fh.write(report.to_jsonl())
    return report


def save_rendered(out_dir, rendered, prefix="", bits=8):
    """Write J and I as 8-bit PNG and the component maps at ``bits`` depth."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name in COMPONENTS:
        path = os.path.join(out_dir, f"{prefix}{name}.png")
        depth = 8 if name in ("J", "I") else bits
        save_image(path, np.clip(getattr(rendered, name), 0.0, 1.0), bits=depth)
        paths[name] = path
    return paths


def interpolate_poses(poses, n_frames):
    """Piecewise interpolation through ``poses``: linear centers, slerp rotations."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if len(poses) == 1 or n_frames == 1:
        return [poses[0]] * n_frames
    keys = np.arange(len(poses), dtype=np.float64)
    slerp = Slerp(keys, Rotation.from_matrix(np.stack([p.rotation for p in poses])))
    centers = np.stack([p.center for p in poses])
    out = []
    for s in np.linspace(0, len(poses) - 1, n_frames):
        R = slerp([s]).as_matrix()[0]
        i = min(int(np.floor(s)), len(poses) - 2)
        c = centers[i] + (s - i) * (centers[i + 1] - centers[i])
        out.append(Pose(R, -R @ c))
    return out


def render_sequence(model, dataset, n_frames, out_dir, bits=8):
    """Fly-through along the dataset's camera path; writes frame_XXXX_J.png etc."""
    model_pair = _resolve(model)
    order = sorted(range(len(dataset)), key=lambda i: dataset.view_ids[i])
    path = interpolate_poses([dataset.poses[i] for i in order], n_frames)
    written = []
    for f, pose in enumerate(path):
        rendered = render_view(model_pair, dataset, pose)
        written.append(save_rendered(out_dir, rendered, prefix=f"frame_{f:04d}_", bits=bits))
    return written
