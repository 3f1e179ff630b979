"""Pair-based progressive co-attention network for fine-grained classification.

Built on a small reverse-mode autodiff engine over numpy arrays
(:mod:`pcanet.tensor`).  The pipeline modules are :mod:`backbone`,
:mod:`coattention`, :mod:`erase`, :mod:`head`, :mod:`data`, :mod:`trainer`
and :mod:`viz`; :mod:`cli` wires them to the ``pcanet`` command.
"""

from .config import RunConfig, TrainConfig, load_config
from .errors import CheckpointError, ConfigError
from .tensor import DimensionError, Tensor

__version__ = "0.1.0"

__all__ = ["RunConfig", "TrainConfig", "load_config", "CheckpointError", "ConfigError",
           "DimensionError", "Tensor", "__version__"]
