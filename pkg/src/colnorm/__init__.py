"""Column-normalized Adam and baseline optimizers, with spectral diagnostics."""

from .linalg import SvdFactors, condition_number, newton_schulz5, polar_orthogonal, singular_spectrum, thin_svd
from .optim import (
    STEPPERS,
    OptimizerConfig,
    ParamSlot,
    StepReport,
    adam_step,
    adamw_step,
    conda_step,
    muon_step_ns,
    muon_step_svd,
    new_slot,
    sgdm_step,
)

__version__ = "0.1.0"
