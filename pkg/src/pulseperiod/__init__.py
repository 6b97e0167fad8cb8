"""Maximum-likelihood period estimation for short periodic pulse trains."""

__version__ = "0.1.0"

from .signal_model import (Measurement, PulseShape, PulseTrainParams, add_noise, make_gaussian_pulse,
                           resample, sigma2_for_snr, synthesize, tabulated_pulse)
from .bounds import (FisherInfo, PulseStats, SingularMatrixError, crlb_multiharmonic,
                     crlb_period_known_shape, fim_known_shape, fim_known_shape_closed, fim_unknown_shape,
                     fim_unknown_shape_closed, pulse_stats, regularized_covariance, singularity_diagnostic)
from .estimators import (GridSpec, PeriodEstimate, PreconditionError, anls, estimate_with_subgrid, mhus_ml,
                         ppks, ppus, recover_pulse, select_model_order)
