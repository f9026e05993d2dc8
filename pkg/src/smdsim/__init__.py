"""Trace-driven simulator for self-managing DRAM and a conventional DDR4 baseline."""

from .chip import AddressMapper, Chip, Geometry, RankDevice
from .controller import Controller, ControllerParams, check_protocol
from .energy import EnergyAccumulator, EnergyConfig, StatsReport, weighted_speedup
from .experiment import (MODES, ExperimentConfig, FrontendParams, System, emit_report, load_config, run,
                         simulate, sweep)
from .timing import DDR4_3200, Command, CommandKind, ConfigError, TimingParams, check_stream

__all__ = [
    "AddressMapper", "Chip", "Geometry", "RankDevice", "Controller", "ControllerParams", "check_protocol",
    "EnergyAccumulator", "EnergyConfig", "StatsReport", "weighted_speedup", "MODES", "ExperimentConfig",
    "FrontendParams", "System", "emit_report", "load_config", "run", "simulate", "sweep", "DDR4_3200",
    "Command", "CommandKind", "ConfigError", "TimingParams", "check_stream",
]
