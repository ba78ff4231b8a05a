"""Blendshape radiance fields.

A bank of multi-level hash-table bases is combined linearly by expression
coefficients, decoded by a tiny network, and rendered with occupancy-gated
volume rendering; training runs entirely on hand-written gradients.
"""

from .camera import Camera, generate_rays, look_at_pose, orbit_pose
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    FrameRecord,
    OracleScene,
    export_dataset,
    load_dataset,
    oracle_render,
    synth_scene,
)
from .errors import (
    BlendFieldError,
    CheckpointError,
    ConfigError,
    DatasetError,
    DomainError,
    NumericError,
    ShapeError,
    StateError,
)
from .estimator import BlendshapeAvatar
from .hashgrid import (
    BankConfig,
    BasisBank,
    BlendedTable,
    blend,
    encode_point,
    encode_points,
    new_bank,
    scatter_gradients,
)
from .losses import StructuralPatchLoss, loss_color, loss_mask, loss_patch
from .metrics import l1, mse, psnr, ssim
from .model import AvatarModel, new_model
from .net import sh_encode, sh_encode_batch
from .occupancy import OccupancyGrid, coeff_envelope, update_grid
from .render import RenderOptions, composite, default_step, render_rays
from .training import TrainConfig, Trainer, sample_patches, schedule_stage

__version__ = "0.1.0"

__all__ = [
    "AvatarModel",
    "BankConfig",
    "BasisBank",
    "BlendFieldError",
    "BlendedTable",
    "BlendshapeAvatar",
    "Camera",
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "DatasetError",
    "DomainError",
    "FrameRecord",
    "NumericError",
    "OccupancyGrid",
    "OracleScene",
    "RenderOptions",
    "ShapeError",
    "StateError",
    "StructuralPatchLoss",
    "TrainConfig",
    "Trainer",
    "blend",
    "coeff_envelope",
    "composite",
    "default_step",
    "encode_point",
    "encode_points",
    "export_dataset",
    "generate_rays",
    "l1",
    "load_checkpoint",
    "load_dataset",
    "look_at_pose",
    "loss_color",
    "loss_mask",
    "loss_patch",
    "mse",
    "new_bank",
    "new_model",
    "oracle_render",
    "orbit_pose",
    "psnr",
    "render_rays",
    "sample_patches",
    "save_checkpoint",
    "scatter_gradients",
    "schedule_stage",
    "sh_encode",
    "sh_encode_batch",
    "ssim",
    "synth_scene",
    "update_grid",
]
