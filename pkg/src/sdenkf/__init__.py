"""Spectral diagonal ensemble Kalman filter.

The forecast covariance is replaced by its diagonal in an orthonormal spectral
basis (DCT, DST or an orthogonal wavelet transform), which makes the analysis
step cost a few transforms plus diagonal arithmetic.  The package also holds
Lorenz 96 and shallow-water twin-experiment drivers and Monte Carlo checks of
the closed-form error expressions.
"""
from .analysis import (FewPoints, FullState, OneVariable, PartialRegion, enkf_analysis,
                       sd_analysis_augmented, sd_analysis_dense_reference,
                       sd_analysis_few_points, sd_analysis_full_obs, sd_analysis_one_var_full)
from .config import ExperimentConfig, load_config, preset
from .harness import ExperimentRecord, emit_results, rmse, run_twin_experiment
from .transforms import BlockTransform, SpectralTransform, dense_matrix, make_transform

__version__ = "0.1.0"

__all__ = [
    "BlockTransform", "ExperimentConfig", "ExperimentRecord", "FewPoints", "FullState",
    "OneVariable", "PartialRegion", "SpectralTransform", "dense_matrix", "emit_results",
    "enkf_analysis", "load_config", "make_transform", "preset", "rmse", "run_twin_experiment",
    "sd_analysis_augmented", "sd_analysis_dense_reference", "sd_analysis_few_points",
    "sd_analysis_full_obs", "sd_analysis_one_var_full",
]
