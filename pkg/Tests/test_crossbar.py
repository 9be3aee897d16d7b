import numpy as np
import pytest

from crossbar import (
    AdcConfig,
    CrossbarError,
    DimensionError,
    MappingError,
    achievable_fractions,
    adc_quantize,
    append_bias,
    array_output_currents,
    calibrate_adc,
    ideal_layers,
    layer_forward,
    map_weights,
    normalize_sum,
    philox4x32,
    sample_array_variation,
    saturation_count,
    seed_key,
)
from device_model import GateStack, GateStackConfig, OperatingPoint, level_conductances, with_overrides

GS_II = GateStackConfig.get_params(GateStack.GS_II)
REF = OperatingPoint(0.5, 300.0)
BINARY = np.array([0.0, 1.0])


def random_binary(rows, cols, seed=0):
    rng = np.random.default_rng(seed)
    return np.where(rng.random((rows, cols)) < 0.5, -1.0, 1.0)


def test_binary_fractions():
    f = achievable_fractions(GS_II, 2)
    assert f[-1] == 1.0
    assert f[0] == pytest.approx(4.88e-11, rel=0.05)


def test_multilevel_fractions_increase():
    f = achievable_fractions(GS_II, 4)
    assert len(f) == 4
    assert np.all(np.diff(f) > 0)
    assert f[-1] == 1.0
    assert f[2] == pytest.approx(0.173, abs=0.005)
    with pytest.raises(CrossbarError):
        achievable_fractions(GS_II, 3)


def test_map_binary_weights():
    layer = map_weights(np.array([[1.0, -1.0, 0.0]]), GS_II, 2, BINARY)
    assert layer.levels_plus.tolist() == [[1, 0, 0]]
    assert layer.levels_minus.tolist() == [[0, 1, 0]]
    assert not layer.eps_plus.any() and not layer.eps_minus.any()
    pair = layer.pair(0, 1)
    assert (pair.plus.state.level, pair.minus.state.level) == (0, 1)


def test_map_multilevel_weight():
    f = achievable_fractions(GS_II, 4)
    layer = map_weights(np.array([[f[1], -f[2]]]), GS_II, 4)
    assert layer.levels_plus.tolist() == [[1, 0]]
    assert layer.levels_minus.tolist() == [[0, 2]]


def test_map_rejects_unachievable_weight():
    with pytest.raises(MappingError):
        map_weights(np.array([[0.5]]), GS_II, 2, BINARY)
    with pytest.raises(MappingError):
        map_weights(np.array([[1.0]]), GS_II, 4, BINARY)
    with pytest.raises(DimensionError):
        map_weights(np.array([1.0, -1.0]), GS_II, 2, BINARY)


def test_layer_arrays_are_read_only():
    layer = map_weights(np.array([[1.0]]), GS_II, 2, BINARY)
    with pytest.raises(ValueError):
        layer.levels_plus[0, 0] = 0


def test_philox_known_answer():
    out = philox4x32(np.zeros((1, 4), dtype=np.uint32), (0, 0))
    assert [f"{w:08x}" for w in out[0]] == ['6627e8d5', 'e169c58d', 'bc57ac4c', '9b00dbd8']


def test_seed_key_splits_words():
    assert seed_key(0x0000000500000007) == (7, 5)


def test_variation_sampling():
    layer = map_weights(random_binary(784, 200), GS_II, 2, BINARY)
    assert sample_array_variation(layer, 0.0, 42) is layer
    varied = sample_array_variation(layer, 0.15, 42)
    again = sample_array_variation(layer, 0.15, 42)
    np.testing.assert_array_equal(varied.eps_plus, again.eps_plus)
    np.testing.assert_array_equal(varied.eps_minus, again.eps_minus)
    assert 0.145 <= varied.eps_plus.std() <= 0.155
    assert 0.145 <= varied.eps_minus.std() <= 0.155
    assert varied.eps_plus.min() > -0.9
    np.testing.assert_array_equal(varied.levels_plus, layer.levels_plus)
    other = sample_array_variation(layer, 0.15, 43)
    assert not np.array_equal(other.eps_plus, varied.eps_plus)


def test_variation_streams_differ_per_layer():
    w = random_binary(10, 10)
    first, second = ideal_layers([w, w], GS_II, 2, BINARY)
    a = sample_array_variation(first, 0.15, 9)
    b = sample_array_variation(second, 0.15, 9)
    assert not np.array_equal(a.eps_plus, b.eps_plus)
    assert not np.array_equal(a.eps_plus, a.eps_minus)


def test_variation_does_not_depend_on_array_size():
    small = map_weights(random_binary(4, 3), GS_II, 2, BINARY)
    large = map_weights(random_binary(8, 6), GS_II, 2, BINARY)
    a = sample_array_variation(small, 0.15, 5)
    b = sample_array_variation(large, 0.15, 5)
    np.testing.assert_array_equal(a.eps_plus, b.eps_plus[:4, :3])


def test_two_row_weighted_sum():
    layer = map_weights(np.array([[1.0], [-1.0]]), GS_II, 2, BINARY)
    g_hrs, g_lrs = level_conductances(GS_II, 2, REF)
    currents = array_output_currents(layer, np.array([1.0, 0.5]), REF)
    assert currents[0] == pytest.approx(0.5 * REF.vd_read * (g_lrs - g_hrs), rel=1e-12)
    assert currents[0] == pytest.approx(0.5 * REF.vd_read * g_lrs, rel=1e-9)


def test_currents_linearity_and_permutation():
    w = random_binary(6, 3, seed=2)
    layer = map_weights(w, GS_II, 2, BINARY)
    assert not array_output_currents(layer, np.zeros(6), REF).any()
    x = np.random.default_rng(3).random(6)
    perm = np.random.default_rng(4).permutation(6)
    permuted = map_weights(w[perm], GS_II, 2, BINARY)
    np.testing.assert_allclose(array_output_currents(permuted, x[perm], REF),
                               array_output_currents(layer, x, REF), rtol=1e-9, atol=1e-18)


def test_currents_validate_inputs():
    layer = map_weights(random_binary(3, 2), GS_II, 2, BINARY)
    with pytest.raises(DimensionError):
        array_output_currents(layer, np.ones(4), REF)
    with pytest.raises(CrossbarError):
        array_output_currents(layer, np.array([0.5, 1.5, 0.0]), REF)


def test_normalized_single_synapse():
    layer = map_weights(np.array([[1.0]]), GS_II, 2, BINARY)
    s = normalize_sum(array_output_currents(layer, np.ones(1), REF), layer, REF)
    f0 = achievable_fractions(GS_II, 2)[0]
    assert s[0] == pytest.approx(1.0 - f0, rel=1e-12)
    assert not normalize_sum(np.zeros(3), layer, REF).any()


def test_normalization_is_scale_invariant():
    w = random_binary(20, 5, seed=6)
    x = np.random.default_rng(7).random((4, 20))
    base = map_weights(w, GS_II, 2, BINARY)
    scaled = map_weights(w, with_overrides(GS_II, k_gain=GS_II.k_gain * 10), 2, BINARY)
    s_base = normalize_sum(array_output_currents(base, x, REF), base, REF)
    s_scaled = normalize_sum(array_output_currents(scaled, x, REF), scaled, REF)
    np.testing.assert_allclose(s_scaled, s_base, rtol=0, atol=1e-12)
    low_vd = OperatingPoint(0.5, 300.0, 0.05)
    s_low = normalize_sum(array_output_currents(base, x, low_vd), base, low_vd)
    np.testing.assert_allclose(s_low, s_base, rtol=0, atol=1e-12)


def test_frozen_normalization_temperature():
    layer = map_weights(np.array([[1.0]]), GS_II, 2, BINARY)
    hot = OperatingPoint(0.5, 398.0)
    currents = array_output_currents(layer, np.ones(1), hot)
    tracked = normalize_sum(currents, layer, hot)
    frozen = normalize_sum(currents, layer, hot, norm_temp=300.0)
    ratio = level_conductances(GS_II, 2, hot)[1] / level_conductances(GS_II, 2, REF)[1]
    assert frozen[0] / tracked[0] == pytest.approx(ratio, rel=1e-12)


def test_normalization_needs_drain_bias():
    layer = map_weights(np.array([[1.0]]), GS_II, 2, BINARY)
    with pytest.raises(CrossbarError):
        normalize_sum(np.zeros(1), layer, OperatingPoint(0.5, 300.0, 0.0))


def test_negated_weights_negate_sums():
    w = random_binary(12, 4, seed=8)
    x = np.random.default_rng(9).random((3, 12))
    pos = map_weights(w, GS_II, 2, BINARY)
    neg = map_weights(-w, GS_II, 2, BINARY)
    np.testing.assert_allclose(layer_forward(neg, x, REF), -layer_forward(pos, x, REF), rtol=0, atol=1e-15)


def test_off_state_contribution_is_negligible():
    for temp in np.linspace(233.0, 398.0, 12):
        g_hrs, g_lrs = level_conductances(GS_II, 2, OperatingPoint(0.5, float(temp)))
        assert 784 * g_hrs < 1e-3 * g_lrs


def test_adc_examples():
    adc = AdcConfig(bits=8, full_scale=64.0)
    assert adc.step == 0.5
    assert adc_quantize(0.0, adc) == 0.0
    assert adc_quantize(0.26, adc) == 0.5
    assert adc_quantize(100.0, adc) == 63.5
    assert adc_quantize(-100.0, adc) == -64.0
    assert adc_quantize(0.25, adc) == 0.5
    assert adc_quantize(-0.25, adc) == -0.5
    np.testing.assert_array_equal(adc_quantize(np.array([0.26, -0.26]), adc), [0.5, -0.5])
    assert saturation_count(np.array([100.0, 0.0, -100.0, 63.5]), adc) == 2


def test_adc_config_validation():
    with pytest.raises(CrossbarError):
        AdcConfig(bits=0)
    with pytest.raises(CrossbarError):
        AdcConfig(bits=17)
    with pytest.raises(CrossbarError):
        AdcConfig(bits=8, full_scale=0.0)


def test_calibrate_adc():
    sums = np.linspace(-2.0, 2.0, 1001)
    adc = calibrate_adc(sums, bits=6)
    assert adc.bits == 6
    assert adc.full_scale == pytest.approx(1.2 * np.percentile(np.abs(sums), 99.9))
    assert calibrate_adc(np.zeros(10)).full_scale == 1.0


def test_layer_forward_matches_dense_product():
    w = random_binary(30, 7, seed=10)
    x = np.random.default_rng(11).random((5, 30))
    layer = map_weights(w, GS_II, 2, BINARY)
    f0 = achievable_fractions(GS_II, 2)[0]
    expected = (1.0 - f0) * (x @ w)
    np.testing.assert_allclose(layer_forward(layer, x, REF), expected, rtol=0, atol=1e-3)
    fine = AdcConfig(bits=16, full_scale=1.0 + np.abs(expected).max())
    np.testing.assert_allclose(layer_forward(layer, x, REF, fine), expected, rtol=0, atol=1e-3)


def test_bias_row_only_input():
    w = random_binary(4, 3, seed=12)
    layer = map_weights(w, GS_II, 2, BINARY)
    s = layer_forward(layer, append_bias(np.zeros((1, 3))), REF)
    f0 = achievable_fractions(GS_II, 2)[0]
    np.testing.assert_allclose(s[0], (1.0 - f0) * w[-1], rtol=1e-12)
