"""Distributed reverse-time-migration mini-app and performance lab."""
from .errors import (ConfigError, CorrectnessError, ExchangeError, LoopError, ProtocolError,
                     RtmError, StepError, UsageError)
from .grid import Decomposition, Face, GlobalGrid, decompose, tile_partition
from .stencil import Box, LoopOrder, StencilSpec, apply_stencil, fd_weights
from .wavefield import Medium, Problem, SourceSpec, Variant, propagate

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CorrectnessError", "ExchangeError", "LoopError", "ProtocolError",
    "RtmError", "StepError", "UsageError",
    "Decomposition", "Face", "GlobalGrid", "decompose", "tile_partition",
    "Box", "LoopOrder", "StencilSpec", "apply_stencil", "fd_weights",
    "Medium", "Problem", "SourceSpec", "Variant", "propagate",
]
