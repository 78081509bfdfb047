"""Rough-volatility pricing, random-grid training sets, neural surrogates,
and implied-volatility surface calibration."""

from .bsm import bs_call_price, bs_implied_vol, bs_vega
from .calibrate import (
    CalibrationResult,
    SurfaceCalibrator,
    controlled_experiment,
    evaluate_surface,
)
from .fvc import FlatCurve, FvcSampler, ParametricCurve, PiecewiseConstantCurve
from .gridgen import (
    GridSpec,
    QuoteSet,
    generate_dataset,
    generate_pointwise,
    generate_random_smiles,
    read_dataset,
    write_dataset,
)
from .neuralnet import SurrogateNet
from .noarb import ScanConfig, ViolationReport, scan
from .rbergomi import McConfig, RBergomiParams, RBergomiPricer, volterra_cov
from .rheston import RHestonParams, RoughHestonPricer

__version__ = "0.1.0"

__all__ = [
    "bs_call_price",
    "bs_implied_vol",
    "bs_vega",
    "FlatCurve",
    "PiecewiseConstantCurve",
    "ParametricCurve",
    "FvcSampler",
    "RHestonParams",
    "RoughHestonPricer",
    "RBergomiParams",
    "RBergomiPricer",
    "McConfig",
    "volterra_cov",
    "GridSpec",
    "QuoteSet",
    "generate_dataset",
    "generate_pointwise",
    "generate_random_smiles",
    "write_dataset",
    "read_dataset",
    "SurrogateNet",
    "SurfaceCalibrator",
    "CalibrationResult",
    "evaluate_surface",
    "controlled_experiment",
    "ScanConfig",
    "ViolationReport",
    "scan",
    "__version__",
]
