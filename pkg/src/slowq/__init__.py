"""Scheduling multiclass multiserver queues whose service slows under congestion."""
from .model import (ConfigError, NumericalError, StateSpaceTooLarge, SystemConfig,
                    config_from_dict, dump_config, load_config)
from .policy import BenchmarkPolicy, ClassifierPolicy, TabularPolicy, strict_priority

__version__ = "0.1.0"

__all__ = [
    "BenchmarkPolicy",
    "ClassifierPolicy",
    "ConfigError",
    "NumericalError",
    "StateSpaceTooLarge",
    "SystemConfig",
    "TabularPolicy",
    "config_from_dict",
    "dump_config",
    "load_config",
    "strict_priority",
]
