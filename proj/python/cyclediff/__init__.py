"""Self-supervised 3d photography toolkit."""

from ._core import (
    CoreError,
    alpha_bars,
    checkpoint_info,
    cycle_pair,
    forward_warp,
    gradcheck,
    init_checkpoint,
    psnr,
    q_sample,
    sample_rollout,
    scene,
    ssim,
    train_demo,
)

__all__ = [
    "CoreError",
    "alpha_bars",
    "checkpoint_info",
    "cycle_pair",
    "forward_warp",
    "gradcheck",
    "init_checkpoint",
    "psnr",
    "q_sample",
    "sample_rollout",
    "scene",
    "ssim",
    "train_demo",
]
