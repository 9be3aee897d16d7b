"""
Temperature Robustness Experiments
Train at 300 K, program the crossbars once, infer at other junction temperatures
without retraining; Monte Carlo over D2D variation and read-bias / gate-stack search.
"""
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from crossbar import (
    AdcConfig,
    append_bias,
    calibrate_adc,
    layer_forward,
    map_weights,
    normalize_sum,
    array_output_currents,
    sample_array_variation,
)
from device_model import (
    DEFAULT_VD_READ,
    SUPPORTED_LEVELS,
    T_REF,
    GateStack,
    GateStackConfig,
    GateStackParams,
    OperatingPoint,
)
from network import QuantizedNetwork, evaluate, sigmoid

logger = logging.getLogger(__name__)

COARSE_TEMPERATURES = (233.0, 300.0, 398.0)
FINE_TEMPERATURES = (233.0, 260.0, 300.0, 325.0, 350.0, 375.0, 398.0)
DEFAULT_VG_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
CSV_FIELDS = ('stack', 'T', 'vg_read', 'L', 'sigma', 'trial', 'accuracy')

CellKey = Tuple[str, float, float, int, float]


class ExperimentError(ValueError):
    """Invalid sweep configuration or inputs"""


class BiasMode(Enum):
    FIXED = "fixed"
    PER_TEMPERATURE = "per-temperature"

    @classmethod
    def parse(cls, value) -> "BiasMode":
        if isinstance(value, BiasMode):
            return value
        for mode in cls:
            if mode.value == str(value).strip().lower():
                return mode
        raise ExperimentError(f"Unknown bias mode '{value}' (expected fixed or per-temperature)")


@dataclass
class SweepConfig:
    gate_stack: GateStackParams = field(default_factory=lambda: GateStackConfig.get_params(GateStack.GS_II))
    temperatures: List[float] = field(default_factory=lambda: list(COARSE_TEMPERATURES))
    vg_read_values: List[float] = field(default_factory=lambda: [0.5])
    sigma: float = 0.15
    trials: int = 10
    master_seed: int = 1
    levels: int = 2
    adc_bits: Optional[int] = 8
    adc_full_scale: Optional[float] = None
    vd_read: float = DEFAULT_VD_READ
    norm_temp: Optional[float] = None
    calibration_size: int = 1000
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.gate_stack, (str, GateStack)):
            self.gate_stack = GateStackConfig.get_params(self.gate_stack)
        self.temperatures = [float(t) for t in self.temperatures]
        self.vg_read_values = [float(v) for v in self.vg_read_values]
        if not self.temperatures or not self.vg_read_values:
            raise ExperimentError("temperatures and vg_read_values must be non-empty")
        if self.trials < 1:
            raise ExperimentError(f"trials must be >= 1, got {self.trials}")
        if self.sigma < 0:
            raise ExperimentError(f"sigma must be non-negative, got {self.sigma}")
        if self.levels not in SUPPORTED_LEVELS:
            raise ExperimentError(f"levels must be one of {SUPPORTED_LEVELS}, got {self.levels}")
        if self.adc_bits is not None:
            AdcConfig(self.adc_bits, self.adc_full_scale or 1.0)
        if self.calibration_size < 1 or self.workers < 1:
            raise ExperimentError("calibration_size and workers must be positive")
        for temp in self.temperatures:
            OperatingPoint(self.vg_read_values[0], temp, self.vd_read)


@dataclass(frozen=True)
class AccuracyRecord:
    gate_stack: str
    temperature: float
    vg_read: float
    levels: int
    sigma: float
    trial: int
    accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ExperimentError(f"Accuracy {self.accuracy} outside [0, 1]")

    @property
    def cell(self) -> CellKey:
        return (self.gate_stack, self.temperature, self.vg_read, self.levels, self.sigma)


@dataclass(frozen=True)
class CellSummary:
    n: int
    mean: float
    std: Optional[float]
    min: float
    max: float


@dataclass
class AccuracyReport:
    records: List[AccuracyRecord] = field(default_factory=list)
    generated: str = field(default_factory=lambda: datetime.now().strftime('%Y-%m-%d %H:%M:%S'), compare=False)

    def summaries(self) -> Dict[CellKey, CellSummary]:
        return monte_carlo_summary(self)

    def mean_accuracy(self, temperature: float, vg_read: float) -> float:
        values = [r.accuracy for r in self.records if r.temperature == temperature and r.vg_read == vg_read]
        if not values:
            raise ExperimentError(f"No records at T={temperature} K, vg_read={vg_read} V")
        return statistics.mean(values)


@dataclass
class BiasOptimization:
    mode: BiasMode
    vg_read: Optional[float]
    per_temperature: Dict[float, float]
    objective: float
    report: AccuracyReport


@dataclass
class DesignChoice:
    params: GateStackParams
    vg_read: float
    objective: float
    candidates: List[BiasOptimization]


def trial_seed(master_seed: int, trial: int) -> int:
    words = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),)).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


class HardwareNetwork:
    """Quantized weights programmed onto crossbars for one Monte Carlo trial."""

    def __init__(self, qnet: QuantizedNetwork, params: GateStackParams, sigma: float = 0.0,
                 seed: int = 0, adcs: Optional[Sequence[Optional[AdcConfig]]] = None,
                 norm_temp: Optional[float] = None):
        self.params = params
        self.scales = list(qnet.scales)
        self.norm_temp = norm_temp
        self.layers = [
            sample_array_variation(map_weights(w, params, qnet.levels, qnet.fraction_set, layer_index=i), sigma, seed)
            for i, w in enumerate(qnet.weights)
        ]
        self.adcs = list(adcs) if adcs is not None else [None] * len(self.layers)
        if len(self.adcs) != len(self.layers):
            raise ExperimentError(f"{len(self.adcs)} ADC configs for {len(self.layers)} layers")

    def forward(self, x: np.ndarray, op: OperatingPoint) -> np.ndarray:
        a = np.asarray(x, dtype=np.float64)
        z = None
        for i, (layer, scale, adc) in enumerate(zip(self.layers, self.scales, self.adcs)):
            z = scale * layer_forward(layer, append_bias(a), op, adc, self.norm_temp)
            if i < len(self.layers) - 1:
                a = sigmoid(z)
        return z

    def predict(self, x: np.ndarray, op: OperatingPoint) -> np.ndarray:
        return np.argmax(self.forward(x, op), axis=1)

    def layer_sums(self, x: np.ndarray, op: OperatingPoint) -> List[np.ndarray]:
        """Normalized pre-ADC sums of every layer, propagating without quantization."""
        sums = []
        a = np.asarray(x, dtype=np.float64)
        for layer, scale in zip(self.layers, self.scales):
            s = normalize_sum(array_output_currents(layer, append_bias(a), op), layer, op, self.norm_temp)
            sums.append(s)
            a = sigmoid(scale * s)
        return sums


def resolve_adcs(cfg: SweepConfig, qnet: QuantizedNetwork, vg_read: float, calibration_images: np.ndarray,
                 params: Optional[GateStackParams] = None) -> Optional[List[AdcConfig]]:
    """Per-layer ADCs: fixed full scale, or 1.2x the 99.9th percentile of |s| at 300 K."""
    if cfg.adc_bits is None:
        return None
    layers = len(qnet.weights)
    if cfg.adc_full_scale is not None:
        return [AdcConfig(cfg.adc_bits, cfg.adc_full_scale)] * layers
    ideal = HardwareNetwork(qnet, params or cfg.gate_stack, norm_temp=cfg.norm_temp)
    sums = ideal.layer_sums(calibration_images[:cfg.calibration_size], OperatingPoint(vg_read, T_REF, cfg.vd_read))
    adcs = [calibrate_adc(s, cfg.adc_bits) for s in sums]
    logger.debug(f"ADC full scales at vg_read={vg_read} V: {[round(a.full_scale, 4) for a in adcs]}")
    return adcs


def run_hw_inference(qnet: QuantizedNetwork, params: GateStackParams, temperature: float, vg_read: float,
                     sigma: float, seed: int, adc: Union[None, AdcConfig, Sequence[AdcConfig]], dataset,
                     vd_read: float = DEFAULT_VD_READ, norm_temp: Optional[float] = None) -> float:
    if isinstance(adc, AdcConfig):
        adc = [adc] * len(qnet.weights)
    hardware = HardwareNetwork(qnet, params, sigma, seed, adc, norm_temp)
    op = OperatingPoint(vg_read, temperature, vd_read)
    return evaluate(lambda xb: hardware.forward(xb, op), dataset)


def _run_trial(cfg: SweepConfig, qnet: QuantizedNetwork, dataset, trial: int,
               adcs_by_vg: Dict[float, Optional[List[AdcConfig]]]) -> List[AccuracyRecord]:
    seed = trial_seed(cfg.master_seed, trial)
    records = []
    for vg in cfg.vg_read_values:
        hardware = HardwareNetwork(qnet, cfg.gate_stack, cfg.sigma, seed, adcs_by_vg[vg], cfg.norm_temp)
        for temp in cfg.temperatures:
            op = OperatingPoint(vg, temp, cfg.vd_read)
            accuracy = evaluate(lambda xb: hardware.forward(xb, op), dataset)
            records.append(AccuracyRecord(cfg.gate_stack.label, temp, vg, qnet.levels, cfg.sigma, trial, accuracy))
    return records


def temperature_sweep(cfg: SweepConfig, qnet: QuantizedNetwork, dataset, calibration_images: Optional[np.ndarray] = None,
                      progress_callback: Optional[Callable[[Dict], None]] = None) -> AccuracyReport:
    """Full factorial over (T, vg_read, trial); records ordered by (T, vg_read, trial)."""
    if qnet.levels != cfg.levels:
        raise ExperimentError(f"Weights carry {qnet.levels} levels, sweep expects {cfg.levels}")
    if len(dataset.labels) == 0:
        raise ExperimentError("Evaluation dataset is empty")
    calibration = dataset.images if calibration_images is None else calibration_images
    adcs_by_vg = {vg: resolve_adcs(cfg, qnet, vg, calibration) for vg in cfg.vg_read_values}

    logger.info(f"Sweeping {cfg.gate_stack.label}: {len(cfg.temperatures)} temperatures x "
                f"{len(cfg.vg_read_values)} biases x {cfg.trials} trials (sigma={cfg.sigma}, L={cfg.levels})")
    if progress_callback:
        progress_callback({'type': 'status', 'message': f"Sweeping {cfg.gate_stack.label}...", 'data': {}})

    results: Dict[int, List[AccuracyRecord]] = {}
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = {pool.submit(_run_trial, cfg, qnet, dataset, t, adcs_by_vg): t for t in range(cfg.trials)}
        for done, (future, trial) in enumerate(futures.items(), start=1):
            results[trial] = future.result()
            if progress_callback:
                progress_callback({
                    'type': 'progress',
                    'message': f"Trial {done}/{cfg.trials} complete",
                    'data': {'processed': done, 'total': cfg.trials},
                })

    t_index = {t: i for i, t in enumerate(cfg.temperatures)}
    v_index = {v: i for i, v in enumerate(cfg.vg_read_values)}
    records = [r for trial in sorted(results) for r in results[trial]]
    records.sort(key=lambda r: (t_index[r.temperature], v_index[r.vg_read], r.trial))
    return AccuracyReport(records)


def _cell_means(report: AccuracyReport) -> Dict[Tuple[float, float], float]:
    grouped: Dict[Tuple[float, float], List[float]] = {}
    for r in report.records:
        grouped.setdefault((r.temperature, r.vg_read), []).append(r.accuracy)
    return {key: statistics.mean(values) for key, values in grouped.items()}


def choose_read_bias(report: AccuracyReport, mode: BiasMode) -> Tuple[Optional[float], Dict[float, float], float]:
    means = _cell_means(report)
    temps = sorted({t for t, _ in means})
    biases = sorted({v for _, v in means})
    if not biases:
        raise ExperimentError("Bias grid is empty")
    if BiasMode.parse(mode) is BiasMode.FIXED:
        best_vg, best = None, -1.0
        for vg in biases:
            worst = min(means[(t, vg)] for t in temps)
            if worst > best:
                best_vg, best = vg, worst
        return best_vg, {t: best_vg for t in temps}, best
    per_temperature = {}
    for t in temps:
        best_vg, best = None, -1.0
        for vg in biases:
            if means[(t, vg)] > best:
                best_vg, best = vg, means[(t, vg)]
        per_temperature[t] = best_vg
    objective = min(means[(t, per_temperature[t])] for t in temps)
    return None, per_temperature, objective


def optimize_read_bias(cfg: SweepConfig, qnet: QuantizedNetwork, dataset, mode=BiasMode.FIXED,
                       calibration_images: Optional[np.ndarray] = None,
                       progress_callback: Optional[Callable[[Dict], None]] = None) -> BiasOptimization:
    """
    Exhaustive read-bias search. Fixed mode maximizes the worst temperature's mean
    accuracy; per-temperature mode picks the best bias at each temperature.
    Ties go to the lower bias.
    """
    mode = BiasMode.parse(mode)
    if not cfg.vg_read_values:
        raise ExperimentError("Bias grid is empty")
    report = temperature_sweep(cfg, qnet, dataset, calibration_images, progress_callback)
    vg, per_temperature, objective = choose_read_bias(report, mode)
    logger.info(f"{cfg.gate_stack.label} {mode.value} bias choice: {vg if vg is not None else per_temperature} "
                f"(worst-case mean accuracy {objective:.4f})")
    if progress_callback:
        progress_callback({'type': 'complete', 'message': 'Bias optimization complete',
                           'data': {'vg_read': vg, 'objective': objective}})
    return BiasOptimization(mode, vg, per_temperature, objective, report)


def optimize_design(cfg: SweepConfig, candidates: List[GateStackParams], qnet: QuantizedNetwork, dataset,
                    calibration_images: Optional[np.ndarray] = None) -> DesignChoice:
    """Joint grid over gate stack (T_Fe) and fixed read bias; ties keep the earlier candidate."""
    if not candidates:
        raise ExperimentError("No gate stack candidates given")
    results = []
    best = None
    for params in candidates:
        result = optimize_read_bias(replace(cfg, gate_stack=params), qnet, dataset, BiasMode.FIXED, calibration_images)
        results.append(result)
        if best is None or result.objective > best[2]:
            best = (params, result.vg_read, result.objective)
    return DesignChoice(best[0], best[1], best[2], results)


def monte_carlo_summary(report: AccuracyReport) -> Dict[CellKey, CellSummary]:
    grouped: Dict[CellKey, List[float]] = {}
    for r in report.records:
        grouped.setdefault(r.cell, []).append(r.accuracy)
    summaries = {}
    for key, values in grouped.items():
        summaries[key] = CellSummary(
            n=len(values),
            mean=statistics.mean(values),
            std=statistics.stdev(values) if len(values) > 1 else None,
            min=min(values),
            max=max(values),
        )
    return summaries


def format_report(report: AccuracyReport) -> str:
    lines = []
    lines.append("=" * 90)
    lines.append("FE-FINFET CROSSBAR INFERENCE ACCURACY")
    lines.append(f"Generated: {report.generated}")
    lines.append(f"Records: {len(report.records)}")
    lines.append("=" * 90)
    lines.append(f"{'Stack':<8} {'T (K)':>8} {'Vg (V)':>8} {'L':>3} {'sigma':>7} {'n':>4} "
                 f"{'Mean %':>8} {'Std %':>8} {'Min %':>8} {'Max %':>8}")
    lines.append("-" * 90)
    for (stack, temp, vg, levels, sigma), s in report.summaries().items():
        std = f"{s.std * 100:8.2f}" if s.std is not None else f"{'-':>8}"
        lines.append(f"{stack:<8} {temp:>8.1f} {vg:>8.3f} {levels:>3} {sigma:>7.3f} {s.n:>4} "
                     f"{s.mean * 100:>8.2f} {std} {s.min * 100:>8.2f} {s.max * 100:>8.2f}")
    lines.append("=" * 90)
    return "\n".join(lines)
