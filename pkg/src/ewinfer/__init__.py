"""Exponential-weights aggregation and inference for high-dimensional linear models."""
from ._kernels import BACKEND
from .exact import EnumerationTooLarge, EwConfig, EwFit, enumerate_models, exact_ew_fit, exact_weights
from .linalg import Dataset, DimensionError, SubmodelFit, fit_submodel, rss_only, swap_update_rss
from .sampler import SamplerConfig, mh_step, run_chain, sample_neighbor

__version__ = "0.1.0"
