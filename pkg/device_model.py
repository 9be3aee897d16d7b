"""
Fe-FinFET Compact Model - temperature-aware channel conductance
Maps (gate stack, programmed level, read bias, junction temperature) to conductance
"""
import hashlib
import json
import logging
from dataclasses import dataclass, asdict, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

BOLTZMANN_OVER_Q = 8.617333e-5  # V/K
T_REF = 300.0
T_MIN_VALID = 200.0
T_MAX_VALID = 450.0
DEFAULT_VD_READ = 0.1
TRIODE_VD_LIMIT = 0.2
EPSILON_FLOOR = -0.9
SUPPORTED_LEVELS = (2, 4, 8)


class DeviceModelError(ValueError):
    """Invalid input to the compact model"""


class DomainError(DeviceModelError):
    pass


class DegenerateStateError(DeviceModelError):
    pass


class ParameterError(DeviceModelError):
    pass


class GateStack(Enum):
    """Fabricated gate stacks"""
    GS_I = "GS-I"
    GS_II = "GS-II"

    @classmethod
    def parse(cls, value) -> "GateStack":
        if isinstance(value, GateStack):
            return value
        text = str(value).strip().upper().replace("_", "-")
        for stack in cls:
            if stack.value == text:
                return stack
        raise ParameterError(f"Unknown gate stack '{value}' (expected GS-I or GS-II)")


@dataclass(frozen=True)
class GateStackParams:
    id: GateStack
    t_fe: float          # m
    vth_hrs_ref: float   # V at t_ref
    vth_lrs_ref: float   # V at t_ref
    kappa_vt: float      # V/K
    n_ideality: float
    k_gain: float        # A/V^2 at t_ref
    mu_exp: float = -1.5
    ec: float = 1.0e8    # V/m
    t_ref: float = T_REF
    kappa_mw: float = 0.0  # V/K, depolarization pull on the HRS branch

    def __post_init__(self):
        if not self.t_fe > 0:
            raise ParameterError(f"t_fe must be positive, got {self.t_fe}")
        if not self.k_gain > 0:
            raise ParameterError(f"k_gain must be positive, got {self.k_gain}")
        if not 1.0 <= self.n_ideality <= 2.0:
            raise ParameterError(f"n_ideality must lie in [1, 2], got {self.n_ideality}")
        if not self.vth_hrs_ref > self.vth_lrs_ref:
            raise ParameterError(
                f"Memory window must be positive: vth_hrs_ref={self.vth_hrs_ref} "
                f"<= vth_lrs_ref={self.vth_lrs_ref}"
            )
        bound = 2.0 * self.ec * self.t_fe
        widest = max(self.window_at(t) for t in (T_MIN_VALID, self.t_ref, T_MAX_VALID))
        if widest > bound + 1e-12:
            raise ParameterError(
                f"Memory window {widest:.3f} V exceeds the ideal bound 2*Ec*T_Fe = {bound:.3f} V"
            )

    @property
    def memory_window(self) -> float:
        return self.vth_hrs_ref - self.vth_lrs_ref

    def window_at(self, temp: float) -> float:
        """Memory window at temp; never negative."""
        return max(self.memory_window + self.kappa_mw * (temp - self.t_ref), 0.0)

    @property
    def label(self) -> str:
        return f"{self.id.value}"

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['id'] = self.id.value
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "GateStackParams":
        values = dict(data)
        values['id'] = GateStack.parse(values['id'])
        return cls(**values)

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class GateStackConfig:
    """Calibration presets for the two gate stacks"""

    CONFIGS = {
        # 2-nm SiO2 interfacial layer + 5-nm HZO: narrow window, weaker gate control
        GateStack.GS_I: {
            't_fe': 5e-9,
            'vth_hrs_ref': 0.75,
            'vth_lrs_ref': 0.35,
            'kappa_vt': -1.0e-3,
            'kappa_mw': -3.8e-3,
            'n_ideality': 1.5,
            'k_gain': 100e-6,
            'mu_exp': -1.5,
            'ec': 1.0e8,
        },
        # 0.8-nm SiO2 + 10-nm HZO: "0" deep in subthreshold, "1" in inversion at 0.5 V
        GateStack.GS_II: {
            't_fe': 10e-9,
            'vth_hrs_ref': 1.1,
            'vth_lrs_ref': 0.1,
            'kappa_vt': -1.0e-3,
            'kappa_mw': 0.0,
            'n_ideality': 1.1,
            'k_gain': 100e-6,
            'mu_exp': -1.5,
            'ec': 1.0e8,
        },
    }

    @classmethod
    def get_params(cls, stack=GateStack.GS_II, **overrides) -> GateStackParams:
        stack = GateStack.parse(stack)
        values = cls.CONFIGS[stack]
        unknown = set(overrides) - set(values) - {'t_ref'}
        if unknown:
            raise ParameterError(f"Unknown gate stack parameter(s): {', '.join(sorted(unknown))}")
        return with_overrides(GateStackParams(id=stack, **values), **overrides)


@dataclass(frozen=True)
class MemoryState:
    level: int
    num_levels: int

    def __post_init__(self):
        if self.num_levels < 1:
            raise DeviceModelError(f"num_levels must be >= 1, got {self.num_levels}")
        if not 0 <= self.level < self.num_levels:
            raise DeviceModelError(f"level {self.level} outside [0, {self.num_levels - 1}]")

    @classmethod
    def hrs(cls, num_levels: int = 2) -> "MemoryState":
        return cls(0, num_levels)

    @classmethod
    def lrs(cls, num_levels: int = 2) -> "MemoryState":
        return cls(num_levels - 1, num_levels)


@dataclass(frozen=True)
class OperatingPoint:
    vg_read: float
    temp: float
    vd_read: float = DEFAULT_VD_READ

    def __post_init__(self):
        if self.vd_read < 0:
            raise DeviceModelError(f"vd_read must be non-negative, got {self.vd_read}")
        if not T_MIN_VALID <= self.temp <= T_MAX_VALID:
            raise DomainError(
                f"Temperature {self.temp} K outside model validity [{T_MIN_VALID}, {T_MAX_VALID}] K"
            )


@dataclass(frozen=True)
class DeviceInstance:
    state: MemoryState
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.epsilon > -1.0:
            raise DeviceModelError(f"epsilon must exceed -1, got {self.epsilon}")


@dataclass(frozen=True)
class CurrentReading:
    amperes: float
    triode_warning: bool = False


def thermal_voltage(temp: float) -> float:
    if not temp > 0:
        raise DomainError(f"Temperature must be positive, got {temp} K")
    return BOLTZMANN_OVER_Q * temp


def effective_mobility_factor(params: GateStackParams, temp: float) -> float:
    _check_temperature(temp)
    return (temp / params.t_ref) ** params.mu_exp


def state_threshold_voltage(params: GateStackParams, state: MemoryState, temp: float) -> float:
    if state.num_levels < 2:
        raise DegenerateStateError("A single-level cell has no threshold interpolation")
    _check_temperature(temp)
    return float(_threshold_voltages(params, state.level / (state.num_levels - 1), temp))


def _threshold_voltages(params: GateStackParams, fraction, temp: float):
    # LRS follows kappa_vt alone; the window above it moves with kappa_mw
    return (params.vth_lrs_ref
            + params.kappa_vt * (temp - params.t_ref)
            + (1.0 - np.asarray(fraction, dtype=np.float64)) * params.window_at(temp))


def inversion_charge(v_ov, n_vt: float):
    """Smooth exponential-to-linear charge in volts; vectorised over v_ov."""
    # logaddexp(0, u) == ln(1 + e^u) without overflow
    return n_vt * np.logaddexp(0.0, np.asarray(v_ov, dtype=np.float64) / n_vt)


def level_conductances(params: GateStackParams, num_levels: int, op: OperatingPoint) -> np.ndarray:
    """Conductance of every programmed level with epsilon = 0, ordered HRS -> LRS."""
    if num_levels < 2:
        raise DegenerateStateError("A single-level cell has no threshold interpolation")
    n_vt = params.n_ideality * thermal_voltage(op.temp)
    vth = _threshold_voltages(params, np.arange(num_levels) / (num_levels - 1), op.temp)
    charge = inversion_charge(op.vg_read - vth, n_vt)
    return params.k_gain * effective_mobility_factor(params, op.temp) * charge


def channel_conductance(params: GateStackParams, device: DeviceInstance, op: OperatingPoint) -> float:
    vth = state_threshold_voltage(params, device.state, op.temp)
    n_vt = params.n_ideality * thermal_voltage(op.temp)
    charge = float(inversion_charge(op.vg_read - vth, n_vt))
    return params.k_gain * effective_mobility_factor(params, op.temp) * charge * (1.0 + device.epsilon)


def drain_current(params: GateStackParams, device: DeviceInstance, op: OperatingPoint) -> CurrentReading:
    warn = op.vd_read > TRIODE_VD_LIMIT
    if warn:
        logger.warning(f"vd_read={op.vd_read} V exceeds the triode limit {TRIODE_VD_LIMIT} V")
    return CurrentReading(channel_conductance(params, device, op) * op.vd_read, warn)


def memory_window_ideal(params: GateStackParams) -> float:
    return 2.0 * params.ec * params.t_fe


def id_vg_curve(params: GateStackParams, state: MemoryState, temp: float,
                vg_grid: List[float], vd_read: float = DEFAULT_VD_READ) -> List[Tuple[float, float]]:
    if len(vg_grid) == 0:
        raise DeviceModelError("Gate voltage grid is empty")
    grid = np.asarray(vg_grid, dtype=np.float64)
    if np.any(np.diff(grid) <= 0):
        raise DeviceModelError("Gate voltage grid must be strictly increasing")
    device = DeviceInstance(state)
    curve = []
    for vg in grid:
        reading = drain_current(params, device, OperatingPoint(float(vg), temp, vd_read))
        curve.append((float(vg), reading.amperes))
    return curve


def sample_variation(sigma: float, stream: np.random.Generator, size: Optional[int] = None):
    """Gaussian D2D factor, redrawn while <= EPSILON_FLOOR. Returns a float or an array."""
    if sigma < 0:
        raise DeviceModelError(f"sigma must be non-negative, got {sigma}")
    count = 1 if size is None else int(size)
    if sigma == 0:
        eps = np.zeros(count)
    else:
        eps = stream.normal(0.0, sigma, count)
        bad = eps <= EPSILON_FLOOR
        while np.any(bad):
            eps[bad] = stream.normal(0.0, sigma, int(bad.sum()))
            bad = eps <= EPSILON_FLOOR
    return float(eps[0]) if size is None else eps


def conductance_vs_temperature(params: GateStackParams, num_levels: int, vg_read: float,
                               temps: List[float]) -> List[Dict]:
    rows = []
    for temp in temps:
        table = level_conductances(params, num_levels, OperatingPoint(vg_read, float(temp)))
        for level, g in enumerate(table):
            rows.append({'temperature': float(temp), 'level': level, 'conductance': float(g)})
    return rows


def read_bias_window(params: GateStackParams, temps: List[float],
                     margin: float = 3.0) -> Optional[Tuple[float, float]]:
    """
    Band of read biases keeping LRS in inversion and HRS in deep subthreshold
    at every temperature in temps. margin is counted in units of n*v_t.
    """
    lrs, hrs = MemoryState.lrs(), MemoryState.hrs()
    low = max(state_threshold_voltage(params, lrs, t) + margin * params.n_ideality * thermal_voltage(t)
              for t in temps)
    high = min(state_threshold_voltage(params, hrs, t) - margin * params.n_ideality * thermal_voltage(t)
               for t in temps)
    if low > high:
        return None
    return low, high


def max_safe_temperature(params: GateStackParams, vg_read: float, min_on_off: float,
                         temps: List[float]) -> Optional[float]:
    safe = None
    for temp in sorted(temps):
        g_hrs, g_lrs = level_conductances(params, 2, OperatingPoint(vg_read, float(temp)))
        if g_lrs / g_hrs < min_on_off:
            break
        safe = float(temp)
    return safe


def memory_window_vs_thickness(ec: float, thicknesses: List[float]) -> List[Dict]:
    return [{'t_fe': float(t), 'memory_window': 2.0 * ec * float(t)} for t in thicknesses]


def with_overrides(params: GateStackParams, **changes) -> GateStackParams:
    return replace(params, **{k: v for k, v in changes.items() if v is not None})


def _check_temperature(temp: float):
    if not temp > 0:
        raise DomainError(f"Temperature must be positive, got {temp} K")
    if not T_MIN_VALID <= temp <= T_MAX_VALID:
        raise DomainError(f"Temperature {temp} K outside model validity [{T_MIN_VALID}, {T_MAX_VALID}] K")
