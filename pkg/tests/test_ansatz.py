from math import pi

import numpy as np
import pytest

from quantum.ansatz import (
    bind_params,
    bind_random,
    build_pool,
    catalogue_templates,
    circuit_from_record,
    circuit_to_record,
    load_bound_circuit,
    make_template,
    output_distribution,
    save_bound_circuit,
)
from quantum.qsim import GateKind

TEMPLATE_IDS = [spec.template_id for spec in catalogue_templates()]


def test_catalogue_has_eight_distinct_templates():
    assert len(TEMPLATE_IDS) == 8
    assert len(set(TEMPLATE_IDS)) == 8
    assert TEMPLATE_IDS == [spec.template_id for spec in catalogue_templates()]


def test_ry_ring_cnot_single_layer_on_four_qubits():
    template = make_template("ry_ring_cnot", 4, 1)
    kinds = [kind for kind, _ in template.skeleton]
    assert kinds.count(GateKind.RY) == 4
    assert kinds.count(GateKind.CNOT) == 4
    ring = [targets for kind, targets in template.skeleton if kind == GateKind.CNOT]
    assert ring == [(0, 1), (1, 2), (2, 3), (3, 0)]


@pytest.mark.parametrize("template_id", TEMPLATE_IDS)
def test_zero_layers_rejected(template_id):
    with pytest.raises(ValueError):
        make_template(template_id, 4, 0)


def test_unknown_template_rejected():
    with pytest.raises(ValueError):
        make_template("no_such_template", 4, 1)


@pytest.mark.parametrize("template_id", TEMPLATE_IDS)
def test_gate_count_scales_with_layers(template_id):
    one = make_template(template_id, 4, 1)
    three = make_template(template_id, 4, 3)
    assert len(three.skeleton) == 3 * len(one.skeleton)
    assert len(three.param_slots) == 3 * len(one.param_slots)
    assert all(q < 4 for _, targets in three.skeleton for q in targets)


@pytest.mark.parametrize("template_id", TEMPLATE_IDS)
def test_templates_build_on_a_single_qubit(template_id):
    template = make_template(template_id, 1, 2)
    circuit = bind_random(template, 5)
    np.testing.assert_allclose(output_distribution(circuit).sum(), 1.0, atol=1e-12)


def test_param_count_mismatch_rejected():
    template = make_template("ry_only", 3, 1)
    with pytest.raises(ValueError):
        bind_params(template, [0.1, 0.2])


def test_bind_random_is_deterministic_and_in_range():
    template = make_template("rx_ry_ring_crx", 4, 2)
    a = bind_random(template, 17)
    b = bind_random(template, 17)
    c = bind_random(template, 18)
    assert a == b
    assert a.params != c.params
    assert all(0.0 <= p < 2 * pi for p in a.params)
    assert [g.angle for g in a.gates if g.kind.is_rotation] == list(a.params)


def test_zero_parameter_ry_circuit_leaves_ground_state():
    template = make_template("ry_only", 4, 1)
    circuit = bind_params(template, np.zeros(4))
    expected = np.zeros(16)
    expected[0] = 1.0
    np.testing.assert_allclose(output_distribution(circuit), expected, atol=1e-15)


def test_pool_shape_and_rows():
    pool = build_pool(4, 50, (1, 3), 42)
    assert len(pool) == 50
    assert pool.embeddings.shape == (50, 16)
    assert np.all(pool.embeddings >= 0)
    np.testing.assert_allclose(pool.embeddings.sum(axis=1), 1.0, atol=1e-9)


def test_pool_is_bit_identical_for_equal_seeds():
    a = build_pool(4, 20, (1, 2), 7)
    b = build_pool(4, 20, (1, 2), 7)
    assert a.circuits == b.circuits
    np.testing.assert_array_equal(a.embeddings, b.embeddings)


def test_pool_does_not_depend_on_worker_count():
    serial = build_pool(3, 24, (1, 2), 3)
    threaded = build_pool(3, 24, (1, 2), 3, max_workers=4)
    assert serial.circuits == threaded.circuits
    np.testing.assert_array_equal(serial.embeddings, threaded.embeddings)


def test_pool_cycles_templates_before_depths():
    pool = build_pool(3, 24, (1, 3), 0)
    cells = [(c.template.template_id, c.template.n_layers) for c in pool.circuits]
    assert cells[:8] == [(t, 1) for t in TEMPLATE_IDS]
    assert cells[8:16] == [(t, 2) for t in TEMPLATE_IDS]
    assert cells[16:24] == [(t, 3) for t in TEMPLATE_IDS]


@pytest.mark.parametrize("kwargs", [
    dict(pool_size=0, layer_range=(1, 2)),
    dict(pool_size=4, layer_range=(0, 2)),
    dict(pool_size=4, layer_range=(3, 2)),
])
def test_pool_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        build_pool(3, master_seed=0, **kwargs)


def test_circuit_survives_yaml_file(tmp_path):
    circuit = bind_random(make_template("ry_rz_alternating_cz", 4, 2), 99)
    path = tmp_path / "filter.yaml"
    save_bound_circuit(str(path), circuit)
    loaded = load_bound_circuit(str(path))
    assert loaded == circuit
    np.testing.assert_array_equal(output_distribution(loaded), output_distribution(circuit))


def test_stored_gates_win_over_metadata():
    circuit = bind_random(make_template("ry_only", 2, 1), 1)
    record = circuit_to_record(circuit)
    record["gates"][0]["angle"] = 0.5
    loaded = circuit_from_record(record)
    assert loaded.gates[0].angle == 0.5
    assert loaded.gates[1] == circuit.gates[1]


def test_record_with_out_of_range_qubit_rejected():
    record = circuit_to_record(bind_random(make_template("ry_only", 2, 1), 1))
    record["gates"][1]["targets"] = [5]
    with pytest.raises(ValueError):
        circuit_from_record(record)


@pytest.mark.parametrize("metadata", [
    {"template_id": "retired_template"},
    {"n_layers": 0},
    {"n_layers": "two"},
])
def test_unusable_metadata_falls_back_to_stored_gates(metadata):
    circuit = bind_random(make_template("ry_ring_cnot", 3, 2), 7)
    record = circuit_to_record(circuit)
    record.update(metadata)
    loaded = circuit_from_record(record)
    assert loaded.gates == circuit.gates
    assert loaded.n_qubits == 3
    assert tuple(loaded.template.expand(loaded.params)) == circuit.gates
    np.testing.assert_array_equal(output_distribution(loaded), output_distribution(circuit))


def test_record_without_n_layers_uses_stored_gates():
    circuit = bind_random(make_template("ry_only", 2, 1), 4)
    record = circuit_to_record(circuit)
    del record["n_layers"]
    assert circuit_from_record(record).gates == circuit.gates
