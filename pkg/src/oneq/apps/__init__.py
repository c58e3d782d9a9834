"""Application layer: key distribution, blind computation, and sensing."""

from .qkd import QkdApp, QkdConfig, QkdResult
from .sensing import SensingApp, SensingConfig, SensingResult
from .ubqc import UbqcApp, UbqcConfig, UbqcResult

__all__ = [
    "QkdApp", "QkdConfig", "QkdResult",
    "UbqcApp", "UbqcConfig", "UbqcResult",
    "SensingApp", "SensingConfig", "SensingResult",
]
