"""Gaussian process regression with retroactive training-input correction.

Train a squared-exponential GP, precompute derivative tensors of its
predictions with respect to every training-input coordinate, and later
correct the predictive mean and covariance for known input errors
without retraining:

    >>> import numpy as np, gpdelta
    >>> X = np.linspace(0, 1, 11); y = np.sin(2 * np.pi * X)
    >>> gp = gpdelta.train(gpdelta.KernelParams(0.1, 0.2, 0.01), X, y)
    >>> queries = np.linspace(0, 1, 50)
    >>> pred = gp.predict_full(queries)
    >>> bundle = gpdelta.build_bundle(gp, queries)
    >>> fixed = gpdelta.correct(pred, bundle, np.full((11, 1), -0.01))
"""

from .bundle_io import load_bundle, save_bundle
from .correction import (CorrectedPrediction, OnlineCorrector, PerturbationSet,
                         apply_increment, begin_incremental, correct,
                         retrain_oracle)
from .derivatives import (BundleMeta, CovDerivatives, DerivativeBundle,
                          MeanDerivatives, build_bundle, cov_hessian_diag,
                          cov_jacobian, mean_hessian_diag, mean_hessian_full,
                          mean_jacobian)
from .errors import (DeltaBoundWarning, DimensionError, DoubleApply,
                     FormatError, GpDeltaError, InvalidRadius, IoError,
                     NotPositiveDefinite, ResourceLimit, StaleBundle,
                     UnsupportedIncrementalMode)
from .gp import GPRegressor, Prediction, inputs_digest, predict, train
from .kernel import (KernelParams, kernel_eval, kernel_grad_b,
                     kernel_grad_cross, kernel_hess_bb, kernel_matrix)
from .remainder import (BoundInputs, RemainderStudy, empirical_remainder,
                        required_order)
from .simulate import (ExperimentReport, FieldSpec, PerturbationModel,
                       TrialResult, preset_config, run_1d_replication,
                       run_2d_replication, run_timing_bench)
from .version import __version__

__all__ = [
    "__version__",
    # model
    "KernelParams", "GPRegressor", "Prediction", "train", "predict",
    "inputs_digest",
    "kernel_eval", "kernel_grad_b", "kernel_hess_bb", "kernel_grad_cross",
    "kernel_matrix",
    # derivatives / bundles
    "MeanDerivatives", "CovDerivatives", "BundleMeta", "DerivativeBundle",
    "build_bundle", "mean_jacobian", "mean_hessian_diag", "mean_hessian_full",
    "cov_jacobian", "cov_hessian_diag", "save_bundle", "load_bundle",
    # correction
    "PerturbationSet", "CorrectedPrediction", "correct", "begin_incremental",
    "apply_increment", "retrain_oracle", "OnlineCorrector",
    # remainder
    "BoundInputs", "required_order", "empirical_remainder", "RemainderStudy",
    # studies
    "FieldSpec", "PerturbationModel", "TrialResult", "ExperimentReport",
    "run_1d_replication", "run_2d_replication", "run_timing_bench",
    "preset_config",
    # errors
    "GpDeltaError", "DimensionError", "NotPositiveDefinite", "ResourceLimit",
    "IoError", "FormatError", "StaleBundle", "DoubleApply",
    "UnsupportedIncrementalMode", "InvalidRadius", "DeltaBoundWarning",
]
