"""Insufficient-data CT toolkit: simulation, analytic and constrained reconstruction."""

from .acquisition import (
    NoiseSpec,
    add_poisson_noise,
    restrict_limited_angle,
    restrict_sparse_view,
    restrict_truncation,
)
from .fbp import FbpConfig, fbp_reconstruct
from .fileio import load_sinogram, load_volume, save_sinogram, save_volume
from .geometry import (
    HuCalibration,
    ImageGrid,
    MeasurementMask,
    RayState,
    ScanGeometry,
    Sinogram,
    Volume,
    hu_to_mu,
    mu_to_hu,
)
from .metrics import RegionMask, lesion_probe, rmse, ssim
from .phantoms import EllipsePhantomSpec, Ellipse, Lesion, make_phantom, shepp_logan_spec
from .prior import DegradationSpec, PriorSource, degrade, load_prior
from .projector import backproject, forward_project, ray_row_sum
from .solver import (
    ConvergenceTrace,
    SolverConfig,
    WtvState,
    inpaint_unmeasured,
    reconstruct_dcr,
    sart_sweep,
    soft_threshold,
    wtv_gradient_step,
    wtv_only_baseline,
    wtv_update_weights,
    wtv_value,
)
from .wce import wce_extrapolate

__version__ = "0.1.0"
