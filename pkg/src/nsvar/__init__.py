"""Standard and robust Bayesian inference for SVARs identified by narrative restrictions."""
from .errors import (BoundaryCaseError, ConfigError, DataError, NonlinearRestrictionError,
                     NsvarError, SamplingError, ZeroPlausibilityError)
from .restrictions import (HistDecomp, RestrictionEvaluator, RestrictionSet, ShockRank, ShockSign,
                           SignRestriction, parse_restrictions)
from .robust import BoundsRecord, Target, bounds_chebyshev, bounds_mc
from .sampling import PhiPosteriorSampler, draw_phi, draw_uniform_orthonormal, sign_fix_columns
from .var_core import ReducedFormParams, impulse_responses, vma_coefficients

__version__ = "0.1.0"

__all__ = [
    "BoundaryCaseError", "BoundsRecord", "ConfigError", "DataError", "HistDecomp",
    "NonlinearRestrictionError", "NsvarError", "PhiPosteriorSampler", "ReducedFormParams",
    "RestrictionEvaluator", "RestrictionSet", "SamplingError", "ShockRank", "ShockSign",
    "SignRestriction", "Target", "ZeroPlausibilityError", "bounds_chebyshev", "bounds_mc",
    "draw_phi", "draw_uniform_orthonormal", "impulse_responses", "parse_restrictions",
    "sign_fix_columns", "vma_coefficients",
]
