"""Bayesian nonparametric density estimation on constrained spaces."""

from .constraints import Box, FullSpace, Interval, PolygonUnion
from .estimator import ConstrainedMixtureDensity
from .evaluation import SampleStore
from .exceptions import (ConfigError, ConstraintViolationError, DataFormatError,
                         DegenerateNormalizerError, RunawayRejectionError)
from .kernels import ComponentParams, NiwParams
from .mixture import AugmentedRejections, Dataset, Hyperparams, MixtureState
from .threshold import ThresholdPolicy

__version__ = "0.1.0"
