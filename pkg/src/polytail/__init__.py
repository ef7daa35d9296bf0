"""Polynomially-tailed losses with importance weights for linear classifiers under label shift."""

__version__ = "0.1.0"

from .data import Dataset, ShiftConfig, generate_label_shift, generate_toy_2d, sample_test_batch  # noqa: E402
from .evaluation import ErrorEstimate, test_error_gaussian_closed_form, test_error_mc  # noqa: E402
from .losses import LeftPiece, LossKind, LossSpec, logistic_loss, poly_loss  # noqa: E402
from .solvers import Direction, solve_max_margin, solve_theta_alpha  # noqa: E402
from .trainer import TrainOptions, TrainTrace, train  # noqa: E402
from .weights import WeightScheme, compute_group_weights, minority_scheme  # noqa: E402

__all__ = [
    "Dataset",
    "ShiftConfig",
    "generate_label_shift",
    "generate_toy_2d",
    "sample_test_batch",
    "ErrorEstimate",
    "test_error_gaussian_closed_form",
    "test_error_mc",
    "LeftPiece",
    "LossKind",
    "LossSpec",
    "logistic_loss",
    "poly_loss",
    "Direction",
    "solve_max_margin",
    "solve_theta_alpha",
    "TrainOptions",
    "TrainTrace",
    "train",
    "WeightScheme",
    "compute_group_weights",
    "minority_scheme",
]
