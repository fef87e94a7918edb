"""Python bindings for the nehad C++ core."""

from ._core import (
    Camera,
    ConfigError,
    Error,
    FormatError,
    NonFiniteError,
    Scene,
    ShapeError,
    clamp_rotation,
    config_text,
    evaluate,
    helmholtz,
    mip_level,
    psnr,
    render,
    rotation_angle,
    ssim,
    synth,
    synth_to_dir,
    train,
    verlet_position,
)

__all__ = [
    "Camera",
    "ConfigError",
    "Error",
    "FormatError",
    "NonFiniteError",
    "Scene",
    "ShapeError",
    "clamp_rotation",
    "config_text",
    "evaluate",
    "helmholtz",
    "mip_level",
    "psnr",
    "render",
    "rotation_angle",
    "ssim",
    "synth",
    "synth_to_dir",
    "train",
    "verlet_position",
]
