"""Scenario corpus for the anomaly taxonomy, with classification and latency tools."""
from .scenarios import SCENARIOS, Scenario, data_path, get, read_text, scenarios
from .taxonomy import (BugClass, Classification, Latency, NoViolation, NotManifested, OracleMissing,
                       classify, classify_detail, classify_scenario, detection_latency, golden_record)

__all__ = [
    "SCENARIOS", "Scenario", "data_path", "get", "read_text", "scenarios", "BugClass",
    "Classification", "Latency", "NoViolation", "NotManifested", "OracleMissing", "classify",
    "classify_detail", "classify_scenario", "detection_latency", "golden_record",
]
