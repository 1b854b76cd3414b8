# Copyright 2026 The offload Authors
# SPDX-License-Identifier: Apache-2.0

import math

import pytest

import offload


def test_closed_forms():
    assert offload.expected_exec_time(0.003, 300) == pytest.approx(486.534370385649887933, rel=1e-12)
    assert offload.expected_time_with_checkpoints(0.003, 300, 6, 6) == pytest.approx(
        353.668485456566245233, rel=1e-12
    )
    assert offload.fault_pdf(0.003, 300) == pytest.approx(0.00121970897922179733, rel=1e-12)


def test_optimizer_matches_table():
    plan = offload.optimal_segments(0.003, 300, 6)
    table = offload.expected_time_table(0.003, 300, 6, 50)
    assert plan["segments"] == table.index(min(table)) + 1
    assert plan["checkpoints"] == plan["segments"] - 1


def test_monte_carlo_near_closed_form():
    mean, stderr = offload.monte_carlo(0.01, 100, 20000, 3)
    assert stderr > 0
    assert mean == pytest.approx(offload.expected_exec_time(0.01, 100), rel=0.03)


def test_domain_errors_raise():
    with pytest.raises(offload.OffloadError) as info:
        offload.expected_exec_time(-1, 300)
    assert info.value.code == "domain"


def test_simulation_exact_overhead():
    run = offload.run_simulation({"mu": 0, "checkpoints": 15})
    assert run["completed"]
    assert run["completion_s"] == 390.0
    assert run["result_digest"] == run["expected_digest"]


def test_simulation_cutoff_is_null():
    run = offload.run_simulation(mu=0.131, max_time_s=300)
    assert run["cutoff"]
    assert run["completion_s"] is None


def test_config_schema_error():
    with pytest.raises(offload.OffloadError) as info:
        offload.run_simulation({"mu": 0, "bogus": 1})
    assert info.value.code == "schema"
    assert "$.bogus" in str(info.value)


def test_experiment_and_determinism():
    assert "optimal_frequency" in offload.experiment_names()
    a = offload.run_experiment("checkpoint_overhead", seed=4)
    b = offload.run_experiment("checkpoint_overhead", seed=4)
    assert a["runs_csv"] == b["runs_csv"]
    assert [r["completion_s"] for r in a["runs"]] == [300.0, 390.0]
    with pytest.raises(offload.OffloadError):
        offload.run_experiment("nope")


def test_envelope_round_trip():
    env = {
        "msg_id": "0f8fad5b-d9cb-469f-a165-70867728950e",
        "msg_type": "heartbeat",
        "sender": "w1",
        "body": {"z": 1, "a": [1.5, "café"]},
    }
    data = offload.encode_envelope(env)
    assert offload.decode_envelope(data) == env
    assert offload.encode_envelope(offload.decode_envelope(data)) == data
    assert data.index('"a"') < data.index('"z"')
    with pytest.raises(offload.OffloadError) as info:
        offload.decode_envelope("{")
    assert info.value.code == "parse"
    assert not math.isnan(offload.p_fault_before(0.003, 300))
