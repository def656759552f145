"""Nonlocal low-rank regularized SPIRiT reconstruction for parallel MRI."""

from importlib.metadata import PackageNotFoundError, version as _dist_version

try:
    __version__ = _dist_version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .calibration import CalibKernel, calibrate, calibrate_from_mask, kernel_to_image_operator
from .fourier import SamplingMask, apply_encoding, apply_encoding_adjoint, fft2c, ifft2c, sos_combine
from .kernels import BACKEND
from .lowrank import ShrinkageParams, shrink_group, shrink_groups
from .metrics import evaluate, hfen, snr, ssim
from .patches import PatchGrouping, aggregate_Q, block_match, extract_groups, place_groups_adjoint
from .sampling import MaskSpec, PhantomSpec, make_mask, make_phantom, phantom_support
from .solvers import ReconConfig, reconstruct, solve_admm, solve_ne

__all__ = [
    "__version__",
    "BACKEND",
    "CalibKernel",
    "MaskSpec",
    "PatchGrouping",
    "PhantomSpec",
    "ReconConfig",
    "SamplingMask",
    "ShrinkageParams",
    "aggregate_Q",
    "apply_encoding",
    "apply_encoding_adjoint",
    "block_match",
    "calibrate",
    "calibrate_from_mask",
    "evaluate",
    "extract_groups",
    "fft2c",
    "hfen",
    "ifft2c",
    "kernel_to_image_operator",
    "make_mask",
    "make_phantom",
    "phantom_support",
    "place_groups_adjoint",
    "reconstruct",
    "shrink_group",
    "shrink_groups",
    "snr",
    "solve_admm",
    "solve_ne",
    "sos_combine",
    "ssim",
]
