"""Metrics, box statistics, reaching evaluation, error maps and reports."""
from .metrics import (SUCCESS_THRESHOLD, TEST_SET_SIZE, BoxStats, OverlapError, ReachReport,
                      ReachResult, TrialLayout, assert_disjoint, box_stats, combined_policy,
                      control_policy, eval_reach, evaluate_perception, is_success,
                      oracle_perception, perception_error, perception_test_set,
                      pseudo_inverse_policy, reach_once, trial_scenes)
from .report import ErrorMap, ReportBundle, emit_report, error_map

__all__ = [
    "SUCCESS_THRESHOLD", "TEST_SET_SIZE", "BoxStats", "ErrorMap", "OverlapError", "ReachReport",
    "ReachResult", "ReportBundle", "TrialLayout", "assert_disjoint", "box_stats",
    "combined_policy", "control_policy", "emit_report", "error_map", "eval_reach",
    "evaluate_perception", "is_success", "oracle_perception", "perception_error",
    "perception_test_set", "pseudo_inverse_policy", "reach_once", "trial_scenes",
]
