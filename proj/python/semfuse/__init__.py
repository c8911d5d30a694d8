"""Infrared/visible image fusion by semantic-prior distillation (C++ core)."""

from ._semfuse import (
    ContractError,
    NumericalError,
    decode_pnm,
    encode_pnm,
    entropy,
    fuse,
    generate_masks,
    gradcheck,
    ms_ssim,
    otsu_threshold,
    parameter_counts,
    run,
    scd,
    sd,
    synthetic_pairs,
    teacher_path_calls,
)

__all__ = [
    "ContractError",
    "NumericalError",
    "decode_pnm",
    "encode_pnm",
    "entropy",
    "fuse",
    "generate_masks",
    "gradcheck",
    "ms_ssim",
    "otsu_threshold",
    "parameter_counts",
    "run",
    "scd",
    "sd",
    "synthetic_pairs",
    "teacher_path_calls",
]
