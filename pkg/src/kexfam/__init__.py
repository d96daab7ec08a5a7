"""Score matching in kernel exponential families: full, Nystrom and lite estimators."""
from .datasets import (Dataset, GaussianParams, GridParams, RingParams, generate,
                       grid_true_score, ring_true_score, sample_gaussian, sample_grid,
                       sample_ring)
from .estimators import (BasisSpec, FitReport, NumericalError, ResourceError, ScoreModel,
                         eval_f, eval_score, eval_second_diag, fit_full, fit_lite,
                         fit_nystrom, make_basis)
from .kernels import KernelConfig
from .objective import GridSearchConfig, fisher_divergence, grid_search, j_hat

__version__ = "0.1.0"
