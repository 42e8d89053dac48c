"""Physics-guided surgical smoke removal.

The package splits into small, independently testable layers:

* ``imgcore``   — image containers, PNG/PNM I/O, colorimetry, resizing
* ``darkprior`` — dark-channel machinery and the classic DCP restorer
* ``atmlayer``  — the drop-in restoration layer with analytic gradients
* ``moestat``   — Laplace/Gauss error statistics and the optimal gate
* ``smokesim``  — synthetic smoke generation and stratified evaluation
* ``metrics``   — RMSE / PSNR / SSIM / CIEDE2000
* ``toytrain``  — a tiny trainable predictor demonstrating the layer
* ``cli``       — the batch command-line front end
"""

from .atmlayer import AtmForwardState, SurgiAtmConfig, backward_l1, backward_l2, forward
from .darkprior import Airlight, DcpConfig, dark_channel, dcp_restore, denorm_dark_channel
from .errors import (
    ArgumentError,
    CheckFailure,
    DomainError,
    EstimationError,
    FormatError,
    PairingError,
    ShapeError,
    SurgiAtmError,
    TrainingError,
)
from .imgcore import ImageBuffer, ScalarField, load_image, save_image
from .metrics import MetricReport, metric_report
from .moestat import GaussParams, LaplaceParams, fit_gauss, fit_laplace, optimal_gate
from .smokesim import PerlinSpec, SmokeField, composite, perlin_field

__version__ = "0.1.0"

__all__ = [
    "AtmForwardState",
    "Airlight",
    "ArgumentError",
    "CheckFailure",
    "DcpConfig",
    "DomainError",
    "EstimationError",
    "FormatError",
    "GaussParams",
    "ImageBuffer",
    "LaplaceParams",
    "MetricReport",
    "PairingError",
    "PerlinSpec",
    "ScalarField",
    "ShapeError",
    "SmokeField",
    "SurgiAtmConfig",
    "SurgiAtmError",
    "TrainingError",
    "backward_l1",
    "backward_l2",
    "composite",
    "dark_channel",
    "dcp_restore",
    "denorm_dark_channel",
    "fit_gauss",
    "fit_laplace",
    "forward",
    "load_image",
    "metric_report",
    "optimal_gate",
    "perlin_field",
    "save_image",
    "__version__",
]
