"""Python bindings for the NieNie rhythm engine core."""

import json

from ._core import (
    NieNieError,
    RhythmPattern,
    StressModel,
    adjusted_score,
    detect_squeeze_events,
    generate_pattern,
    logistic,
    match_onsets,
    plan_ramp,
    sanitize,
    select_tone,
    window_count,
)
from . import _core


def simulate(model_path, seed=0, skill=0.9, **config):
    """Run one headless closed-loop session; returns the event log as a list of dicts."""
    return [json.loads(line) for line in _core._simulate(str(model_path), seed, skill, json.dumps(config)).splitlines()]


def summarize(records):
    """Quarter means, adherence and phase durations for an event log."""
    return json.loads(_core._summarize(_to_jsonl(records)))


def replay(records, model_path):
    """Re-run a recorded log through the pipeline; returns the regenerated log."""
    out = _core._replay(_to_jsonl(records), str(model_path))
    return [json.loads(line) for line in out.splitlines()]


def _to_jsonl(records):
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)


__all__ = [
    "NieNieError",
    "RhythmPattern",
    "StressModel",
    "adjusted_score",
    "detect_squeeze_events",
    "generate_pattern",
    "logistic",
    "match_onsets",
    "plan_ramp",
    "replay",
    "sanitize",
    "select_tone",
    "simulate",
    "summarize",
    "window_count",
]
