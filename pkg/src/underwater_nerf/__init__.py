"""Restoration of underwater scenes with a generalizable neural radiance field."""

from .data_io import (
    CameraIntrinsics,
    DegradationParams,
    Pose,
    SceneDataset,
    load_scene,
    make_toy_scene,
    synthesize_underwater,
    write_scene,
)
from .estimator import UnderwaterNeRF
from .evaluation import evaluate_scene, render_sequence, render_view
from .formation import ComponentPatch, compose
from .metrics import psnr, ssim, uciqe, uiqm
from .trainer import TrainConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "ComponentPatch",
    "DegradationParams",
    "Pose",
    "SceneDataset",
    "TrainConfig",
    "UnderwaterNeRF",
    "compose",
    "evaluate_scene",
    "load_checkpoint",
    "load_scene",
    "make_toy_scene",
    "psnr",
    "render_sequence",
    "render_view",
    "save_checkpoint",
    "ssim",
    "synthesize_underwater",
    "uciqe",
    "uiqm",
    "write_scene",
]
