"""
Fe-FinFET Crossbar - differential synapse arrays realizing one NN layer
Analog weighted sum, max-conductance normalization and ADC quantization
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from device_model import (
    EPSILON_FLOOR,
    SUPPORTED_LEVELS,
    DeviceInstance,
    GateStackParams,
    MemoryState,
    OperatingPoint,
    level_conductances,
)

logger = logging.getLogger(__name__)

REFERENCE_OP = OperatingPoint(vg_read=0.5, temp=300.0)
MAX_RESAMPLE_ATTEMPTS = 64

# Philox4x32-10 constants
PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
MASK32 = np.uint64(0xFFFFFFFF)


class CrossbarError(ValueError):
    """Invalid crossbar construction or evaluation"""


class MappingError(CrossbarError):
    pass


class DimensionError(CrossbarError):
    pass


@dataclass(frozen=True)
class SynapsePair:
    plus: DeviceInstance
    minus: DeviceInstance


@dataclass(frozen=True)
class AdcConfig:
    bits: int = 8
    full_scale: float = 1.0

    def __post_init__(self):
        if not 1 <= self.bits <= 16:
            raise CrossbarError(f"ADC bits must lie in [1, 16], got {self.bits}")
        if not self.full_scale > 0:
            raise CrossbarError(f"ADC full_scale must be positive, got {self.full_scale}")

    @property
    def step(self) -> float:
        return self.full_scale / 2 ** (self.bits - 1)


@dataclass(frozen=True, eq=False)
class CrossbarLayer:
    params: GateStackParams
    num_levels: int
    levels_plus: np.ndarray
    levels_minus: np.ndarray
    eps_plus: np.ndarray
    eps_minus: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        shape = self.levels_plus.shape
        if len(shape) != 2:
            raise DimensionError(f"Crossbar matrices must be 2-D, got shape {shape}")
        for name in ('levels_minus', 'eps_plus', 'eps_minus'):
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for levels in (self.levels_plus, self.levels_minus):
            if levels.size and (levels.min() < 0 or levels.max() >= self.num_levels):
                raise CrossbarError(f"Programmed level outside [0, {self.num_levels - 1}]")
        for eps in (self.eps_plus, self.eps_minus):
            if eps.size and not np.all(eps > -1.0):
                raise CrossbarError("Variation factors must exceed -1")
            eps.setflags(write=False)
        self.levels_plus.setflags(write=False)
        self.levels_minus.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.levels_plus.shape[0]

    @property
    def cols(self) -> int:
        return self.levels_plus.shape[1]

    def pair(self, row: int, col: int) -> SynapsePair:
        return SynapsePair(
            plus=DeviceInstance(MemoryState(int(self.levels_plus[row, col]), self.num_levels),
                                float(self.eps_plus[row, col])),
            minus=DeviceInstance(MemoryState(int(self.levels_minus[row, col]), self.num_levels),
                                 float(self.eps_minus[row, col])),
        )

    def differential_conductance(self, op: OperatingPoint) -> np.ndarray:
        table = level_conductances(self.params, self.num_levels, op)
        g_plus = table[self.levels_plus] * (1.0 + self.eps_plus)
        g_minus = table[self.levels_minus] * (1.0 + self.eps_minus)
        return g_plus - g_minus


def achievable_fractions(params: GateStackParams, num_levels: int,
                         op_ref: OperatingPoint = REFERENCE_OP) -> np.ndarray:
    if num_levels not in SUPPORTED_LEVELS:
        raise CrossbarError(f"Unsupported level count {num_levels}; expected one of {SUPPORTED_LEVELS}")
    table = level_conductances(params, num_levels, op_ref)
    fractions = table / table[-1]
    if np.any(np.diff(fractions) <= 0):
        raise CrossbarError(f"Level conductances are not strictly increasing at {op_ref}: {fractions}")
    return fractions


def map_weights(w_quant: np.ndarray, params: GateStackParams, num_levels: int,
                fractions: Optional[np.ndarray] = None, layer_index: int = 0) -> CrossbarLayer:
    """Program a quantized weight matrix onto differential pairs (w>0 -> plus side)."""
    if fractions is None:
        fractions = achievable_fractions(params, num_levels)
    fractions = np.asarray(fractions, dtype=np.float64)
    if len(fractions) != num_levels:
        raise MappingError(f"Fraction set has {len(fractions)} entries for {num_levels} levels")
    w = np.asarray(w_quant, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionError(f"Weight matrix must be 2-D, got shape {w.shape}")

    magnitude = np.abs(w)
    levels = np.full(w.shape, -1, dtype=np.int16)
    levels[magnitude == 0] = 0
    for level, fraction in enumerate(fractions):
        levels[np.isclose(magnitude, fraction, rtol=1e-9, atol=0.0)] = level
    unmapped = levels < 0
    if np.any(unmapped):
        example = float(w[unmapped][0])
        raise MappingError(
            f"{int(unmapped.sum())} weight(s) are not achievable fractions (e.g. {example!r}); "
            f"allowed magnitudes: {fractions.tolist()}"
        )
    levels = levels.astype(np.uint8)
    zeros = np.zeros(w.shape, dtype=np.uint8)
    return CrossbarLayer(
        params=params,
        num_levels=num_levels,
        levels_plus=np.where(w > 0, levels, zeros),
        levels_minus=np.where(w < 0, levels, zeros),
        eps_plus=np.zeros(w.shape),
        eps_minus=np.zeros(w.shape),
        layer_index=layer_index,
    )


def philox4x32(counters: np.ndarray, key: Tuple[int, int], rounds: int = 10) -> np.ndarray:
    """Counter-based Philox4x32 block function evaluated for every counter row at once."""
    c0, c1, c2, c3 = (counters[..., i].astype(np.uint64) for i in range(4))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = c0 * PHILOX_M0
        p1 = c2 * PHILOX_M1
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ np.uint64(k0),
            p1 & MASK32,
            (p0 >> np.uint64(32)) ^ c3 ^ np.uint64(k1),
            p0 & MASK32,
        )
        k0 = (k0 + PHILOX_W0) & 0xFFFFFFFF
        k1 = (k1 + PHILOX_W1) & 0xFFFFFFFF
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def philox_normals(counters: np.ndarray, key: Tuple[int, int]) -> np.ndarray:
    words = philox4x32(counters, key).astype(np.uint64)
    a = (words[..., 0] << np.uint64(32)) | words[..., 1]
    b = (words[..., 2] << np.uint64(32)) | words[..., 3]
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    u2 = (b >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def seed_key(master_seed: int) -> Tuple[int, int]:
    seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def sample_array_variation(layer: CrossbarLayer, sigma: float, master_seed: int) -> CrossbarLayer:
    """
    Draw an independent epsilon for every device.

    Each device owns the Philox counter (row, col, 2*layer_index + tag, attempt)
    under the key derived from master_seed, so the result does not depend on
    evaluation order.
    """
    if sigma < 0:
        raise CrossbarError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return layer
    key = seed_key(master_seed)
    rows, cols = np.meshgrid(np.arange(layer.rows, dtype=np.uint32),
                             np.arange(layer.cols, dtype=np.uint32), indexing='ij')
    sampled = []
    for tag in (0, 1):
        counters = np.zeros((layer.rows, layer.cols, 4), dtype=np.uint32)
        counters[..., 0] = rows
        counters[..., 1] = cols
        counters[..., 2] = 2 * layer.layer_index + tag
        eps = sigma * philox_normals(counters, key)
        bad = eps <= EPSILON_FLOOR
        attempt = 0
        while np.any(bad):
            attempt += 1
            if attempt > MAX_RESAMPLE_ATTEMPTS:
                raise CrossbarError(f"Variation resampling did not converge for sigma={sigma}")
            logger.debug(f"Layer {layer.layer_index}: redrawing {int(bad.sum())} epsilon values (attempt {attempt})")
            retry = counters[bad]
            retry[:, 3] = attempt
            eps[bad] = sigma * philox_normals(retry, key)
            bad = eps <= EPSILON_FLOOR
        sampled.append(eps)
    return replace(layer, eps_plus=sampled[0], eps_minus=sampled[1])


def append_bias(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    ones = np.ones(x.shape[:-1] + (1,))
    return np.concatenate([x, ones], axis=-1)


def array_output_currents(layer: CrossbarLayer, x: np.ndarray, op: OperatingPoint) -> np.ndarray:
    """Column currents I_j = sum_i x_i * vd * (G+_ij - G-_ij); x may be a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.rows:
        raise DimensionError(f"Input has {x.shape[-1]} entries, crossbar has {layer.rows} rows")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise CrossbarError("Row activations must lie in [0, 1]")
    return op.vd_read * (x @ layer.differential_conductance(op))


def normalize_sum(currents: np.ndarray, layer: CrossbarLayer, op: OperatingPoint,
                  norm_temp: Optional[float] = None) -> np.ndarray:
    """Divide by vd * G_max, G_max tracking the operating temperature unless norm_temp freezes it."""
    ref = op if norm_temp is None else OperatingPoint(op.vg_read, norm_temp, op.vd_read)
    g_max = level_conductances(layer.params, layer.num_levels, ref)[-1]
    if op.vd_read <= 0 or not g_max > 0:
        raise CrossbarError(f"Cannot normalize with vd_read={op.vd_read} V and G_max={g_max} S")
    return np.asarray(currents, dtype=np.float64) / (op.vd_read * g_max)


def adc_quantize(s, adc: AdcConfig):
    half = 2 ** (adc.bits - 1)
    v = np.asarray(s, dtype=np.float64) / adc.step
    code = np.clip(np.sign(v) * np.floor(np.abs(v) + 0.5), -half, half - 1)
    q = code * adc.step
    return float(q) if np.ndim(q) == 0 else q


def saturation_count(s, adc: AdcConfig) -> int:
    half = 2 ** (adc.bits - 1)
    v = np.asarray(s, dtype=np.float64) / adc.step
    code = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return int(np.count_nonzero((code < -half) | (code > half - 1)))


def calibrate_adc(sums: np.ndarray, bits: int = 8, headroom: float = 1.2,
                  percentile: float = 99.9) -> AdcConfig:
    full_scale = headroom * float(np.percentile(np.abs(sums), percentile))
    if not full_scale > 0:
        logger.warning("Calibration batch produced all-zero sums; using full_scale=1.0")
        full_scale = 1.0
    return AdcConfig(bits=bits, full_scale=full_scale)


def layer_forward(layer: CrossbarLayer, x: np.ndarray, op: OperatingPoint,
                  adc: Optional[AdcConfig] = None, norm_temp: Optional[float] = None) -> np.ndarray:
    s = normalize_sum(array_output_currents(layer, x, op), layer, op, norm_temp)
    if adc is None:
        return s
    clipped = saturation_count(s, adc)
    if clipped:
        logger.debug(f"Layer {layer.layer_index}: {clipped} ADC conversions saturated at T={op.temp} K")
    return adc_quantize(s, adc)


def ideal_layers(weights: List[np.ndarray], params: GateStackParams, num_levels: int,
                 fractions: np.ndarray) -> List[CrossbarLayer]:
    return [map_weights(w, params, num_levels, fractions, layer_index=i) for i, w in enumerate(weights)]
