"""Field rewriting under stealth constraints, offline or through a relay."""

from .policy import (FixValue, Freeze, InjectionPolicy, PolicyFormatError, PolicyViolation,
                     Ramp, RandomInBounds, Stealth, Strategy, UnknownTarget, dump_policies,
                     find_target, load_policies, policy_from_dict, policy_to_dict,
                     resolve_profile)
from .relay import ConnectFailed, Relay, pick_flow, run_relay
from .rewrite import (LOG_HEADER, InjectionLog, LogEntry, Rewriter, SkipEntry, dumps_log,
                      load_log, loads_log, log_path_for, restore_trace, rewrite_trace,
                      save_log)
from .stealth import (OFF_SCALE, OUT_OF_BOUNDS, OUT_OF_SEQUENCE, UNDECODABLE, UNKNOWN_FLOW,
                      WRONG_LENGTH, FieldTracker, Locator, StealthMonitor, UnknownFlow,
                      Verdict, Violation, check_trace, stealth_check)
