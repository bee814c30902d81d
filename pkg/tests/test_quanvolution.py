from concurrent.futures import ThreadPoolExecutor
from functools import reduce
from math import pi

import numpy as np
import pytest

from learning.quanvolution import (
    AngleScale,
    HierarchyLevel,
    QuanvLayerConfig,
    Signal,
    check_geometry,
    encode_patch,
    extract_features,
    extract_hierarchy,
    filter_observable,
    filter_response,
    fit_angle_scale,
    max_pool,
    output_length,
    quanvolve,
    FeatureMap,
)
from quantum.ansatz import bind_random, catalogue_templates, make_template
from quantum.qsim import circuit_evaluations, reset_evaluation_counter, z_tensor_expectation
from tests.conftest import identity_filter, random_bank
from tests.test_qsim import Z, dense, kron_all

G_OF_ONE = pi * np.tanh(1.0)
TEMPLATE_IDS = [spec.template_id for spec in catalogue_templates()]


def _layer(window, stride, K, seed, scale=AngleScale()):
    return QuanvLayerConfig(window, stride, random_bank(window, K, seed), scale)


@pytest.mark.parametrize("N,f,s,expected", [(192, 4, 2, 95), (7, 7, 1, 1), (10, 3, 3, 3)])
def test_output_length_examples(N, f, s, expected):
    assert output_length(N, f, s) == expected


def test_output_length_matches_window_enumeration(rng):
    for _ in range(1000):
        f = int(rng.integers(1, 10))
        s = int(rng.integers(1, 10))
        N = int(rng.integers(f, 80))
        starts = [p for p in range(N) if p + f <= N and p % s == 0]
        assert output_length(N, f, s) == len(starts)


def test_output_length_rejects_short_input():
    with pytest.raises(ValueError):
        output_length(3, 4, 1)


def test_encode_zero_patch_is_ground_state():
    state = encode_patch(np.zeros(4), AngleScale())
    assert z_tensor_expectation(state) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("f", [1, 2, 3, 4])
def test_encode_pi_patch_flips_every_qubit(f):
    state = encode_patch(np.full(f, pi), AngleScale())
    assert z_tensor_expectation(state) == pytest.approx((-1) ** f, abs=1e-12)


def test_encode_half_pi_pair():
    state = encode_patch([pi / 2, pi / 2], AngleScale())
    np.testing.assert_allclose(state.amplitudes, [0.5] * 4, atol=1e-15)
    assert z_tensor_expectation(state) == pytest.approx(0.0, abs=1e-15)


def test_angle_scale_clamps():
    scale = AngleScale(-1.0, 1.0)
    np.testing.assert_allclose(scale([-5.0, -1.0, 0.0, 1.0, 5.0]), [0, 0, pi / 2, pi, pi])
    np.testing.assert_allclose(AngleScale(2.0, 2.0)([2.0, 2.5]), [0.0, pi / 2])


def test_fit_angle_scale_range_takes_data_range():
    scale = fit_angle_scale([Signal([[0.5, -2.0]]), Signal([[3.0, 1.0]])], method="range")
    assert (scale.lo, scale.hi) == (-2.0, 3.0)


def test_fit_angle_scale_standardizes_training_values(rng):
    maps = [Signal(rng.normal(1.5, 0.4, size=(2, 30))) for _ in range(4)]
    values = np.concatenate([m.values.reshape(-1) for m in maps])
    mean, std = values.mean(), values.std()
    scale = fit_angle_scale(maps)
    assert scale(mean) == pytest.approx(3 * pi / 8, abs=1e-12)
    assert scale(mean + std) - scale(mean) == pytest.approx(pi / 40, abs=1e-12)
    angles = scale(values)
    assert np.all((angles > 0.0) & (angles < pi))

    custom = fit_angle_scale(maps, offset=pi / 4, gain=0.2)
    assert custom(mean - 2 * std) == pytest.approx(pi / 4 - 0.4, abs=1e-12)


def test_fit_angle_scale_on_constant_maps():
    scale = fit_angle_scale([Signal(np.full(5, 2.0))])
    assert scale(2.0) == pytest.approx(3 * pi / 8, abs=1e-12)
    assert scale.hi > scale.lo


@pytest.mark.parametrize("kwargs", [dict(method="quantile"), dict(offset=0.0), dict(offset=pi), dict(gain=0.0)])
def test_fit_angle_scale_rejects_bad_settings(kwargs):
    with pytest.raises(ValueError):
        fit_angle_scale([Signal(np.arange(4.0))], **kwargs)


def test_fit_angle_scale_needs_data():
    with pytest.raises(ValueError):
        fit_angle_scale([])


def test_identity_filter_on_zero_patch():
    assert filter_response(np.zeros(4), identity_filter(4), AngleScale()) == pytest.approx(G_OF_ONE, abs=1e-12)


def test_filter_functions_take_a_circuit_keyword():
    circuit = identity_filter(2)
    assert filter_response(np.zeros(2), circuit=circuit, scale=AngleScale()) == pytest.approx(G_OF_ONE, abs=1e-12)
    np.testing.assert_allclose(filter_observable(circuit=circuit), np.diag([1.0, -1.0, -1.0, 1.0]), atol=1e-12)


def test_zero_expectation_gives_zero_response():
    assert filter_response([pi / 2], identity_filter(1), AngleScale()) == pytest.approx(0.0, abs=1e-15)


def test_filter_response_size_mismatch():
    with pytest.raises(ValueError):
        filter_response(np.zeros(3), identity_filter(4), AngleScale())


def test_filter_response_matches_dense_oracle(rng):
    for trial in range(100):
        template_id = TEMPLATE_IDS[trial % len(TEMPLATE_IDS)]
        circuit = bind_random(make_template(template_id, 4, 1 + trial % 3), trial)
        patch = rng.uniform(-1.0, 2.0, size=4)
        scale = AngleScale(-0.5, 1.5)
        angles = scale(patch)
        psi = kron_all([np.array([np.cos(a / 2), np.sin(a / 2)], dtype=complex) for a in angles])
        unitary = reduce(lambda acc, g: dense(g, 4) @ acc, circuit.gates, np.eye(16, dtype=complex))
        psi = unitary @ psi
        expected = pi * np.tanh(np.real(np.vdot(psi, kron_all([Z] * 4) @ psi)))
        assert abs(filter_response(patch, circuit, scale) - expected) < 1e-10


def test_quanvolve_shape_on_bearing_length(rng):
    config = _layer(4, 2, 4, seed=1)
    out = quanvolve(Signal(rng.normal(size=192)), config)
    assert (out.channels, out.length) == (4, 95)


def test_quanvolve_matches_per_patch_responses(rng):
    config = _layer(4, 2, 3, seed=2, scale=AngleScale(-2.0, 2.0))
    signal = Signal(rng.normal(size=(2, 21)))
    out = quanvolve(signal, config)
    for c in range(2):
        for k, circuit in enumerate(config.bank.filters):
            for p in range(out.length):
                patch = signal.values[c, 2 * p:2 * p + 4]
                expected = filter_response(patch, circuit, config.input_scale)
                assert abs(out.values[c * 3 + k, p] - expected) < 1e-10


def test_quanvolve_counts_one_evaluation_per_response(rng):
    config = _layer(3, 1, 2, seed=3)
    quanvolve(Signal(np.zeros(3)), config)
    reset_evaluation_counter()
    quanvolve(Signal(rng.normal(size=(2, 10))), config)
    assert circuit_evaluations() == 2 * 2 * 8


def test_constant_zero_signal_with_identity_filter():
    bank = random_bank(4, 2, 0)
    bank = type(bank)(1, (identity_filter(4),) + bank.filters[1:], bank.selection_indices, bank.provenance)
    out = quanvolve(Signal(np.zeros(20)), QuanvLayerConfig(4, 2, bank))
    np.testing.assert_allclose(out.values[0], G_OF_ONE, atol=1e-12)


def test_stride_shift_moves_output_one_position(rng):
    config = _layer(4, 3, 3, seed=4, scale=AngleScale(-3.0, 3.0))
    x = rng.normal(size=40)
    full = quanvolve(Signal(x), config)
    shifted = quanvolve(Signal(x[3:]), config)
    np.testing.assert_allclose(shifted.values, full.values[:, 1:1 + shifted.length], atol=1e-12)


def test_channel_permutation_permutes_output_blocks(rng):
    config = _layer(3, 2, 2, seed=5, scale=AngleScale(-3.0, 3.0))
    x = rng.normal(size=(3, 15))
    out = quanvolve(Signal(x), config)
    swapped = quanvolve(Signal(x[[2, 0, 1]]), config)
    blocks = out.values.reshape(3, 2, -1)
    np.testing.assert_allclose(swapped.values.reshape(3, 2, -1), blocks[[2, 0, 1]], atol=1e-12)


def test_activations_stay_inside_range(rng):
    config = _layer(4, 4, 4, seed=6, scale=AngleScale(-5.0, 5.0))
    out = quanvolve(Signal(rng.uniform(-5.0, 5.0, size=100_000)), config)
    assert out.values.size == 100_000
    assert np.all(np.abs(out.values) <= G_OF_ONE + 1e-9)
    assert np.all(np.abs(out.values) < pi)


def test_quanvolve_rejects_short_signal():
    with pytest.raises(ValueError):
        quanvolve(Signal(np.zeros(3)), _layer(4, 1, 1, seed=0))


def test_layer_rejects_bank_of_wrong_width():
    with pytest.raises(ValueError):
        QuanvLayerConfig(3, 1, random_bank(4, 2, 0))


def test_max_pool_examples():
    out = max_pool(FeatureMap([[1.0, 3.0, 2.0, 0.0]]), 2, 2)
    np.testing.assert_array_equal(out.values, [[3.0, 2.0]])
    constant = max_pool(FeatureMap(np.full((2, 9), 0.7)), 3, 2)
    np.testing.assert_array_equal(constant.values, np.full((2, 4), 0.7))
    whole = max_pool(FeatureMap([[0.1, -4.0, 2.5, 1.0]]), 4, 1)
    np.testing.assert_array_equal(whole.values, [[2.5]])


def test_max_pool_rejects_wide_window():
    with pytest.raises(ValueError):
        max_pool(FeatureMap([[1.0, 2.0]]), 3, 1)


def test_two_level_hierarchy_on_bearing_length(rng):
    levels = [HierarchyLevel(_layer(4, 2, 4, seed=7)), HierarchyLevel(_layer(4, 2, 4, seed=8))]
    assert check_geometry(192, [(4, 2, 4, 2, 2), (4, 2, 4, 2, 2)]) == [(4, 47), (16, 11)]
    signal = Signal(rng.uniform(0, pi, size=192))
    vector = extract_hierarchy(signal, levels)
    assert vector.shape == (176,)
    np.testing.assert_array_equal(vector, extract_hierarchy(signal, levels))


def test_single_level_hierarchy_is_pooled_quanvolution(rng):
    level = HierarchyLevel(_layer(4, 2, 4, seed=9))
    signal = Signal(rng.uniform(0, pi, size=192))
    vector = extract_hierarchy(signal, [level])
    assert vector.shape == (188,)
    np.testing.assert_array_equal(vector, max_pool(quanvolve(signal, level.layer), 2, 2).values.reshape(-1))


def test_geometry_violation_names_the_level():
    with pytest.raises(ValueError, match="Level 2"):
        check_geometry(192, [(4, 2, 4, 2, 2), (60, 2, 4, 2, 2)])
    levels = [HierarchyLevel(_layer(4, 2, 2, seed=0)), HierarchyLevel(_layer(4, 2, 2, seed=1))]
    with pytest.raises(ValueError, match="Level 2"):
        extract_hierarchy(Signal(np.zeros(12)), levels)


def test_extract_features_freezes_scales_on_training_rows(rng):
    signals = [Signal(rng.normal(size=40)) for _ in range(6)]
    levels = [HierarchyLevel(_layer(3, 2, 2, seed=10)), HierarchyLevel(_layer(2, 1, 2, seed=11))]
    features, frozen = extract_features(signals, [0, 1, 2], levels)

    assert frozen[0].layer.input_scale == fit_angle_scale(signals[:3])
    assert features.shape == (6, 4 * 4)
    for i, signal in enumerate(signals):
        np.testing.assert_array_equal(features[i], extract_hierarchy(signal, frozen))

    with ThreadPoolExecutor(max_workers=3) as executor:
        threaded, _ = extract_features(signals, [0, 1, 2], levels, executor=executor)
    np.testing.assert_array_equal(threaded, features)


def test_extract_features_honours_level_angle_fit(rng):
    signals = [Signal(rng.normal(size=40)) for _ in range(5)]
    levels = [HierarchyLevel(_layer(3, 2, 2, seed=12), angle_fit="range"),
              HierarchyLevel(_layer(2, 1, 2, seed=13), angle_offset=pi / 4, angle_gain=0.1)]
    _, frozen = extract_features(signals, [0, 1], levels)
    assert frozen[0].layer.input_scale == fit_angle_scale(signals[:2], method="range")
    level_one = [max_pool(quanvolve(s, frozen[0].layer), 2, 2) for s in signals[:2]]
    assert frozen[1].layer.input_scale == fit_angle_scale(level_one, offset=pi / 4, gain=0.1)
