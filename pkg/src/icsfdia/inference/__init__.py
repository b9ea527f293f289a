"""Heuristic inference of periodic schedules, changeable fields and change order."""

from .fields import (FieldDiff, FieldKind, FieldProfile, FieldRef, GroupRef, GroupTooSmall,
                     LengthGroup, find_changed_fields, group_by_length, profile_fields, value_stats)
from .model import (AttackModel, ComplexityReport, FlowModel, ModelFormatError, Thresholds,
                    build_attack_model, dumps_model, estimate_complexity, load_model, loads_model,
                    save_model)
from .schedule import NoPeriodFound, PeriodicSchedule, find_period, sort_periodic
from .sequence import Edge, Pattern, SequenceRelation, mine_sequence

__all__ = [
    "FieldDiff", "FieldKind", "FieldProfile", "FieldRef", "GroupRef", "GroupTooSmall",
    "LengthGroup", "find_changed_fields", "group_by_length", "profile_fields", "value_stats",
    "AttackModel", "ComplexityReport", "FlowModel", "ModelFormatError", "Thresholds",
    "build_attack_model", "dumps_model", "estimate_complexity", "load_model", "loads_model",
    "save_model", "NoPeriodFound", "PeriodicSchedule", "find_period", "sort_periodic",
    "Edge", "Pattern", "SequenceRelation", "mine_sequence",
]
