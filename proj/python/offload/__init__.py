# Copyright 2026 The offload Authors
# SPDX-License-Identifier: Apache-2.0
"""Checkpoint planning, simulation and the message codec of offload."""

import json as _json

from . import _core
from ._core import (
    OffloadError,
    expected_exec_time,
    expected_fault_time,
    expected_time_table,
    expected_time_with_checkpoints,
    experiment_names,
    ey_second_derivative,
    fault_pdf,
    monte_carlo,
    p_fault_before,
)

__all__ = [
    "OffloadError",
    "decode_envelope",
    "encode_envelope",
    "expected_exec_time",
    "expected_fault_time",
    "expected_time_table",
    "expected_time_with_checkpoints",
    "experiment_names",
    "ey_second_derivative",
    "fault_pdf",
    "monte_carlo",
    "optimal_segments",
    "p_fault_before",
    "run_experiment",
    "run_simulation",
    "run_trials",
]


def optimal_segments(mu, T, C):
    """Smallest segment count minimizing the expected completion time."""
    return _json.loads(_core.optimal_segments(mu, T, C))


def run_simulation(config=None, run_id="run", **fields):
    """Runs one simulation. `config` is a dict in the `sim run` format."""
    doc = dict(config or {}, **fields)
    return _json.loads(_core.run_simulation(_json.dumps(doc), run_id))


def run_trials(config, trials):
    return _json.loads(_core.run_trials(_json.dumps(config), trials))


def run_experiment(name, trials=0, seed=1, mode="model_faithful"):
    return _json.loads(_core.run_experiment(name, trials, seed, mode))


def encode_envelope(envelope):
    """Canonical bytes (as str) of an envelope dict."""
    return _core.encode_envelope(_json.dumps(envelope))


def decode_envelope(data):
    return _json.loads(_core.decode_envelope(data))
