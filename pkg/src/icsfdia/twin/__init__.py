"""Digital-twin traffic generator used as ground truth for inference."""

from .presets import PRESETS, default_scenario, periodic_example_scenario, sutd_scenario
from .scenario import (ComponentSpec, ConfigInvalid, Endian, Kind, PadField, PlcSpec, PollSlot,
                       SequenceCase, TwinScenario, dump_scenario, load_scenario, validate)
from .sim import (GroundTruth, RealizedCase, TruthField, apply_countermeasures, load_truth,
                  run_scenario, save_truth)

__all__ = [
    "PRESETS", "default_scenario", "periodic_example_scenario", "sutd_scenario",
    "ComponentSpec", "ConfigInvalid", "Endian", "Kind", "PadField", "PlcSpec", "PollSlot",
    "SequenceCase", "TwinScenario", "dump_scenario", "load_scenario", "validate",
    "GroundTruth", "RealizedCase", "TruthField", "apply_countermeasures", "load_truth",
    "run_scenario", "save_truth",
]
