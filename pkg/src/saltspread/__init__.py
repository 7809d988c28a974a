"""Sensor-driven salt spreader control and route-replay simulation."""

from ._kernels import BACKEND
from .controller import ControllerConfig, PRESETS, full_discharge, load_config
from .errors import InputError, InvariantError, SaltSpreadError
from .rfid import RoadsideTag, decode_tag, encode_tag
from .simulation import compare_policies, run, synth_route
from .telemetry import Trace, moving_average, parse_trace

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ControllerConfig",
    "InputError",
    "InvariantError",
    "PRESETS",
    "RoadsideTag",
    "SaltSpreadError",
    "Trace",
    "compare_policies",
    "decode_tag",
    "encode_tag",
    "full_discharge",
    "load_config",
    "moving_average",
    "parse_trace",
    "run",
    "synth_route",
]
