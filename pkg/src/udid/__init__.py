"""Universal difference-in-differences under odds-ratio equi-confounding."""

from .data_model import (ADDITIVE, MULTIPLICATIVE, Contrast, PanelDataset, ParameterStack,
                         contrast_eval, validate)
from .errors import (ConvergenceError, DivergentTiltError, OverlapError, SeparationError,
                     SingularMatrixError, UdidError, ValidationError)
from .estimators import StackFit, UdidModel, fit_udid
from .or_family import (Discretized, FamilySpec, LogLinear, bernoulli_or, beta_eval, bin_assign,
                        get_family, make_cutpoints)

__version__ = "0.1.0"
