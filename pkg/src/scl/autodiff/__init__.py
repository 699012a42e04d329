from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .tensor import (Parameter, Tape, Tensor, active_tape, backward,
                     debug_checks_enabled, set_debug_checks)

__all__ = [
    "ops", "Tensor", "Tape", "Parameter", "backward", "active_tape",
    "set_debug_checks", "debug_checks_enabled", "grad_check", "GradCheckReport",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
