"""
Data I/O - MNIST IDX ingestion, INI run configuration,
versioned checkpoint/crossbar containers and accuracy reports
"""
import configparser
import csv
import gzip
import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from crossbar import CrossbarError, CrossbarLayer
from device_model import DeviceModelError, GateStack, GateStackConfig, GateStackParams
from experiments import (
    CSV_FIELDS,
    AccuracyRecord,
    AccuracyReport,
    BiasMode,
    ExperimentError,
    SweepConfig,
)
from network import DEFAULT_DIMS, MLPModel, NetworkError, QuantizedNetwork, TrainConfig, export_quantized

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
IMAGE_SIDE = 28
NUM_CLASSES = 10

MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}

CONTAINER_MAGIC = b'FEFETSIM'
CONTAINER_VERSION = 1
_PREAMBLE = struct.Struct('<HI')

PathLike = Union[str, Path]


class IdxFormatError(ValueError):
    """Malformed IDX file"""


class MagicNumberError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class ShapeError(IdxFormatError):
    pass


class ContainerError(ValueError):
    """Malformed or mismatched checkpoint/crossbar container"""


class ReportFormatError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key is not None:
            location.append(f"key '{key}'")
        super().__init__(f"{', '.join(location)}: {message}" if location else message)


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: Split = Split.TEST

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if images.ndim != 2:
            raise ShapeError(f"Images must be an N x D matrix, got shape {images.shape}")
        if labels.ndim != 1 or len(labels) != len(images):
            raise CountMismatchError(f"{len(images)} images but {labels.size} labels")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise IdxFormatError("Pixel values must lie in [0, 1]")
        if labels.size and labels.min() < 0:
            raise IdxFormatError("Labels must be non-negative")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'images', images)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'split', Split(self.split))

    def __len__(self) -> int:
        return len(self.labels)

    def head(self, count: int) -> "Dataset":
        return Dataset(self.images[:count], self.labels[:count], self.split)


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == '.gz' else open
    with opener(path, 'rb') as f:
        return f.read()


def parse_idx_images(data: bytes, source: str = '<bytes>') -> np.ndarray:
    if len(data) < 4:
        raise TruncatedFileError(f"{source}: {len(data)} bytes is too short for an IDX header")
    magic = struct.unpack('>I', data[:4])[0]
    if magic != IMAGE_MAGIC:
        hint = " (this looks like a label file)" if magic == LABEL_MAGIC else ""
        raise MagicNumberError(f"{source}: magic {magic}, expected {IMAGE_MAGIC} for images{hint}")
    if len(data) < 16:
        raise TruncatedFileError(f"{source}: image header is truncated")
    count, rows, cols = struct.unpack('>III', data[4:16])
    if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
        raise ShapeError(f"{source}: images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}")
    expected = count * rows * cols
    payload = data[16:]
    if len(payload) < expected:
        raise TruncatedFileError(f"{source}: {len(payload)} pixel bytes, header promises {expected}")
    if len(payload) > expected:
        raise IdxFormatError(f"{source}: {len(payload) - expected} trailing bytes after pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    return pixels.astype(np.float64) / 255.0


def parse_idx_labels(data: bytes, source: str = '<bytes>') -> np.ndarray:
    if len(data) < 4:
        raise TruncatedFileError(f"{source}: {len(data)} bytes is too short for an IDX header")
    magic = struct.unpack('>I', data[:4])[0]
    if magic != LABEL_MAGIC:
        hint = " (this looks like an image file)" if magic == IMAGE_MAGIC else ""
        raise MagicNumberError(f"{source}: magic {magic}, expected {LABEL_MAGIC} for labels{hint}")
    if len(data) < 8:
        raise TruncatedFileError(f"{source}: label header is truncated")
    count = struct.unpack('>I', data[4:8])[0]
    payload = data[8:]
    if len(payload) < count:
        raise TruncatedFileError(f"{source}: {len(payload)} label bytes, header promises {count}")
    if len(payload) > count:
        raise IdxFormatError(f"{source}: {len(payload) - count} trailing bytes after labels")
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= NUM_CLASSES:
        raise IdxFormatError(f"{source}: label {int(labels.max())} outside [0, {NUM_CLASSES - 1}]")
    return labels


def load_mnist_idx(images_path: PathLike, labels_path: PathLike, split=Split.TEST) -> Dataset:
    images = parse_idx_images(_read_bytes(images_path), str(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path), str(labels_path))
    if len(images) != len(labels):
        raise CountMismatchError(
            f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels"
        )
    logger.info(f"Loaded {len(labels)} {Split(split).value} samples from {Path(images_path).name}")
    return Dataset(images, labels, Split(split))


def _find_idx(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(
        f"Missing {name} (or {name}.gz) in {directory}. Download the MNIST IDX files "
        f"and point --data or MNIST_DIR at their directory."
    )


def load_mnist(directory: PathLike, split='test') -> Dataset:
    split = Split(split)
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"MNIST directory {directory} does not exist")
    images_name, labels_name = MNIST_FILES[split.value]
    return load_mnist_idx(_find_idx(directory, images_name), _find_idx(directory, labels_name), split)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    params: GateStackParams
    train: TrainConfig
    sweep: SweepConfig
    dims: List[int] = field(default_factory=lambda: list(DEFAULT_DIMS))
    bias_mode: BiasMode = BiasMode.FIXED
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None


def _optional(parser: Callable, *none_words: str) -> Callable:
    def parse(text: str):
        if text.strip().lower() in none_words + ('none', ''):
            return None
        return parser(text)
    return parse


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _float_list(text: str) -> List[float]:
    values = [float(part) for part in text.split(',') if part.strip()]
    if not values:
        raise ValueError("expected a non-empty comma-separated list")
    return values


def _int_list(text: str) -> List[int]:
    values = _float_list(text)
    if any(v != int(v) for v in values):
        raise ValueError(f"'{text}' holds a non-integer")
    return [int(v) for v in values]


def _path(text: str) -> Optional[str]:
    return text.strip() or None


_DEVICE_KEYS = ('t_fe', 'vth_hrs_ref', 'vth_lrs_ref', 'kappa_vt', 'kappa_mw', 'n_ideality', 'k_gain', 'mu_exp', 'ec')

# section -> key -> (parser, default, range check, range message)
SCHEMA: Dict[str, Dict[str, Tuple]] = {
    'device': dict(
        {'stack': (lambda s: GateStack.parse(s).value, 'GS-II', None, '')},
        **{key: (_optional(float), None, None, '') for key in _DEVICE_KEYS},
    ),
    'train': {
        'dims': (_int_list, list(DEFAULT_DIMS), lambda v: len(v) >= 2 and min(v) >= 1, 'needs >= 2 positive sizes'),
        'epochs': (int, 30, lambda v: v >= 1, 'must be >= 1'),
        'batch_size': (int, 64, lambda v: v >= 1, 'must be >= 1'),
        'learning_rate': (float, 0.1, lambda v: v > 0, 'must be > 0'),
        'seed': (int, 1, lambda v: 0 <= v < 2 ** 64, 'must fit in an unsigned 64-bit integer'),
        'levels': (int, 2, lambda v: v in (2, 4, 8), 'must be 2, 4 or 8'),
        'loss': (str, 'cross-entropy-softmax', lambda v: v in ('cross-entropy-softmax', 'mse-sigmoid'),
                 'must be cross-entropy-softmax or mse-sigmoid'),
        'quantized': (_bool, True, None, ''),
        'workers': (int, 1, lambda v: v >= 1, 'must be >= 1'),
    },
    'sweep': {
        'temperatures': (_float_list, [233.0, 300.0, 398.0], lambda v: min(v) >= 200 and max(v) <= 450,
                         'temperatures must lie in [200, 450] K'),
        'vg_read': (_float_list, [0.5], None, ''),
        'vd_read': (float, 0.1, lambda v: v > 0, 'must be > 0'),
        'sigma': (float, 0.15, lambda v: v >= 0, 'must be >= 0'),
        'trials': (int, 10, lambda v: v >= 1, 'must be >= 1'),
        'master_seed': (int, 1, lambda v: 0 <= v < 2 ** 64, 'must fit in an unsigned 64-bit integer'),
        'norm_temp': (_optional(float), None, lambda v: v is None or 200 <= v <= 450, 'must lie in [200, 450] K'),
        'calibration_size': (int, 1000, lambda v: v >= 1, 'must be >= 1'),
        'workers': (int, 1, lambda v: v >= 1, 'must be >= 1'),
        'mode': (str, 'fixed', lambda v: v in ('fixed', 'per-temperature'), 'must be fixed or per-temperature'),
    },
    'adc': {
        'bits': (_optional(int, 'off'), 8, lambda v: v is None or 1 <= v <= 16, 'must be off or in [1, 16]'),
        'full_scale': (_optional(float, 'auto'), None, lambda v: v is None or v > 0, 'must be auto or > 0'),
    },
    'paths': {
        'data_dir': (_path, None, None, ''),
        'out_dir': (_path, None, None, ''),
        'checkpoint': (_path, None, None, ''),
    },
}


def _line_index(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    index = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in '#;':
            continue
        if line.startswith('[') and line.endswith(']'):
            section = line[1:-1].strip().lower()
            index.setdefault((section, None), number)
        elif section is not None:
            for sep in ('=', ':'):
                if sep in line:
                    index.setdefault((section, line.split(sep, 1)[0].strip().lower()), number)
                    break
    return index


def parse_config_text(text: str, source: str = '<config>',
                      overrides: Optional[Dict[str, Dict[str, str]]] = None) -> RunConfig:
    """overrides ({section: {key: text}}) take precedence over the file, e.g. command-line flags."""
    parser = configparser.ConfigParser(interpolation=None)
    overrides = overrides or {}
    try:
        parser.read_string(text, source=source)
        parser.read_dict(overrides, source='<command line>')
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}", line=getattr(e, 'lineno', None)) from e
    lines = _line_index(text)

    values: Dict[str, Dict] = {section: {k: entry[1] for k, entry in keys.items()} for section, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}] (expected {', '.join(SCHEMA)})",
                              line=lines.get((section, None)))
        for key, raw in parser.items(section):
            line = None if key in overrides.get(section, {}) else lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key in [{section}]", line=line, key=key)
            convert, _, check, message = SCHEMA[section][key]
            try:
                value = convert(raw)
            except (ValueError, DeviceModelError) as e:
                raise ConfigError(f"cannot parse '{raw}': {e}", line=line, key=key) from e
            if check is not None and not check(value):
                raise ConfigError(f"value {raw!r} out of range: {message}", line=line, key=key)
            values[section][key] = value

    device, train, sweep, adc, paths = (values[s] for s in ('device', 'train', 'sweep', 'adc', 'paths'))
    device_overrides = {k: device[k] for k in _DEVICE_KEYS if device[k] is not None}
    try:
        params = GateStackConfig.get_params(device['stack'], **device_overrides)
        train_cfg = TrainConfig(
            epochs=train['epochs'], batch_size=train['batch_size'], learning_rate=train['learning_rate'],
            seed=train['seed'], levels=train['levels'], loss=train['loss'], quantized=train['quantized'],
            workers=train['workers'],
        )
        sweep_cfg = SweepConfig(
            gate_stack=params, temperatures=sweep['temperatures'], vg_read_values=sweep['vg_read'],
            sigma=sweep['sigma'], trials=sweep['trials'], master_seed=sweep['master_seed'], levels=train['levels'],
            adc_bits=adc['bits'], adc_full_scale=adc['full_scale'], vd_read=sweep['vd_read'],
            norm_temp=sweep['norm_temp'], calibration_size=sweep['calibration_size'], workers=sweep['workers'],
        )
    except (DeviceModelError, NetworkError, ExperimentError, CrossbarError) as e:
        raise ConfigError(f"{source}: {e}") from e

    data_dir = paths['data_dir']
    if data_dir is not None and not Path(data_dir).is_dir():
        raise ConfigError(f"directory {data_dir} does not exist", line=lines.get(('paths', 'data_dir')),
                          key='data_dir')
    return RunConfig(params, train_cfg, sweep_cfg, train['dims'], BiasMode.parse(sweep['mode']),
                     data_dir, paths['out_dir'], paths['checkpoint'])


def parse_config(path: Optional[PathLike] = None,
                 overrides: Optional[Dict[str, Dict[str, str]]] = None) -> RunConfig:
    """Parse an INI run configuration; None yields the documented defaults."""
    if path is None:
        return parse_config_text('', '<defaults>', overrides)
    path = Path(path)
    return parse_config_text(path.read_text(encoding='utf-8'), str(path), overrides)


def _fmt(value) -> str:
    if value is None:
        return 'none'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ','.join(_fmt(v) for v in value)
    return str(value)


def resolved_config_text(cfg: RunConfig) -> str:
    """Every resolved value, defaults included, as parseable INI."""
    params = cfg.params
    sections = {
        'device': [('stack', params.id.value)] + [(k, _fmt(float(getattr(params, k)))) for k in _DEVICE_KEYS],
        'train': [
            ('dims', _fmt(list(cfg.dims))),
            ('epochs', _fmt(cfg.train.epochs)),
            ('batch_size', _fmt(cfg.train.batch_size)),
            ('learning_rate', _fmt(float(cfg.train.learning_rate))),
            ('seed', _fmt(cfg.train.seed)),
            ('levels', _fmt(cfg.train.levels)),
            ('loss', cfg.train.loss.value),
            ('quantized', _fmt(cfg.train.quantized)),
            ('workers', _fmt(cfg.train.workers)),
        ],
        'sweep': [
            ('temperatures', _fmt([float(t) for t in cfg.sweep.temperatures])),
            ('vg_read', _fmt([float(v) for v in cfg.sweep.vg_read_values])),
            ('vd_read', _fmt(float(cfg.sweep.vd_read))),
            ('sigma', _fmt(float(cfg.sweep.sigma))),
            ('trials', _fmt(cfg.sweep.trials)),
            ('master_seed', _fmt(cfg.sweep.master_seed)),
            ('norm_temp', _fmt(cfg.sweep.norm_temp)),
            ('calibration_size', _fmt(cfg.sweep.calibration_size)),
            ('workers', _fmt(cfg.sweep.workers)),
            ('mode', cfg.bias_mode.value),
        ],
        'adc': [
            ('bits', 'off' if cfg.sweep.adc_bits is None else _fmt(cfg.sweep.adc_bits)),
            ('full_scale', 'auto' if cfg.sweep.adc_full_scale is None else _fmt(float(cfg.sweep.adc_full_scale))),
        ],
        'paths': [
            ('data_dir', cfg.data_dir or ''),
            ('out_dir', cfg.out_dir or ''),
            ('checkpoint', cfg.checkpoint or ''),
        ],
    }
    lines = []
    for section, items in sections.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in items)
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Binary container: magic, uint16 version, uint32 header length, JSON header, arrays
# ---------------------------------------------------------------------------

def write_container(path: PathLike, kind: str, metadata: Dict, arrays: Dict[str, np.ndarray]):
    table = []
    payloads = []
    offset = 0
    for name, array in arrays.items():
        a = np.ascontiguousarray(array, dtype=np.asarray(array).dtype.newbyteorder('<'))
        table.append({'name': name, 'dtype': a.dtype.str, 'shape': list(a.shape), 'offset': offset, 'nbytes': a.nbytes})
        payloads.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({'kind': kind, 'metadata': metadata, 'arrays': table}, sort_keys=True).encode('utf-8')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CONTAINER_MAGIC)
        f.write(_PREAMBLE.pack(CONTAINER_VERSION, len(header)))
        f.write(header)
        for payload in payloads:
            f.write(payload)


def read_container(path: PathLike, kind: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, 'rb') as f:
        data = f.read()
    start = len(CONTAINER_MAGIC) + _PREAMBLE.size
    if len(data) < start or data[:len(CONTAINER_MAGIC)] != CONTAINER_MAGIC:
        raise ContainerError(f"{path} is not a {kind} file (bad magic)")
    version, header_len = _PREAMBLE.unpack(data[len(CONTAINER_MAGIC):start])
    if version != CONTAINER_VERSION:
        raise ContainerError(f"{path}: unsupported container version {version} (expected {CONTAINER_VERSION})")
    if len(data) < start + header_len:
        raise ContainerError(f"{path}: header is truncated")
    try:
        header = json.loads(data[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: corrupt header ({e})") from e
    if header.get('kind') != kind:
        raise ContainerError(f"{path} holds a '{header.get('kind')}', expected '{kind}'")

    body = data[start + header_len:]
    arrays = {}
    for entry in header['arrays']:
        end = entry['offset'] + entry['nbytes']
        if end > len(body):
            raise ContainerError(f"{path}: array '{entry['name']}' is truncated")
        chunk = body[entry['offset']:end]
        arrays[entry['name']] = np.frombuffer(chunk, dtype=np.dtype(entry['dtype'])).reshape(entry['shape']).copy()
    return header['metadata'], arrays


@dataclass
class Checkpoint:
    model: MLPModel
    levels: int
    fraction_set: np.ndarray
    loss: str
    history: List[Dict] = field(default_factory=list)

    def quantized(self) -> QuantizedNetwork:
        return export_quantized(self.model, self.fraction_set, self.levels)


def save_checkpoint(path: PathLike, model: MLPModel, cfg: TrainConfig, history: Optional[List[Dict]] = None):
    metadata = {
        'dims': list(model.dims),
        'seed': model.seed,
        'epoch': model.epoch,
        'levels': cfg.levels,
        'fraction_set': [float(f) for f in cfg.fraction_set] if cfg.fraction_set is not None else None,
        'loss': cfg.loss.value,
        'quantized': cfg.quantized,
        'scales': model.scales,
        'history': history or [],
    }
    arrays = {f"w{i}": w for i, w in enumerate(model.shadow_weights)}
    write_container(path, 'checkpoint', metadata, arrays)
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path: PathLike) -> Checkpoint:
    metadata, arrays = read_container(path, 'checkpoint')
    weights = [arrays[f"w{i}"] for i in range(len(metadata['dims']) - 1)]
    try:
        model = MLPModel(metadata['dims'], weights, seed=metadata['seed'], epoch=metadata['epoch'])
    except NetworkError as e:
        raise ContainerError(f"{path}: {e}") from e
    fractions = metadata['fraction_set']
    if fractions is None:
        raise ContainerError(f"{path}: checkpoint carries no fraction set; it cannot be mapped to hardware")
    return Checkpoint(model, metadata['levels'], np.array(fractions), metadata['loss'], metadata['history'])


def save_crossbar(path: PathLike, layers: List[CrossbarLayer], metadata: Optional[Dict] = None):
    """Snapshot programmed levels and sampled epsilons, tagged with the gate-stack hash."""
    if not layers:
        raise ContainerError("No crossbar layers to save")
    params = layers[0].params
    header = dict(metadata or {})
    header.update({
        'params': params.to_dict(),
        'params_hash': params.fingerprint(),
        'num_levels': layers[0].num_levels,
        'layers': len(layers),
    })
    arrays = {}
    for i, layer in enumerate(layers):
        if layer.params != params:
            raise ContainerError("All layers of a snapshot must share one gate stack")
        arrays[f"levels_plus{i}"] = layer.levels_plus
        arrays[f"levels_minus{i}"] = layer.levels_minus
        arrays[f"eps_plus{i}"] = layer.eps_plus
        arrays[f"eps_minus{i}"] = layer.eps_minus
    write_container(path, 'crossbar', header, arrays)


def load_crossbar(path: PathLike) -> Tuple[List[CrossbarLayer], Dict]:
    metadata, arrays = read_container(path, 'crossbar')
    params = GateStackParams.from_dict(metadata['params'])
    if params.fingerprint() != metadata['params_hash']:
        raise ContainerError(f"{path}: gate stack parameters do not match the stored hash")
    layers = [
        CrossbarLayer(
            params=params,
            num_levels=metadata['num_levels'],
            levels_plus=arrays[f"levels_plus{i}"],
            levels_minus=arrays[f"levels_minus{i}"],
            eps_plus=arrays[f"eps_plus{i}"],
            eps_minus=arrays[f"eps_minus{i}"],
            layer_index=i,
        )
        for i in range(metadata['layers'])
    ]
    return layers, metadata


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _report_rows(report: AccuracyReport) -> List[List]:
    return [
        [r.gate_stack, repr(float(r.temperature)), repr(float(r.vg_read)), r.levels,
         repr(float(r.sigma)), r.trial, repr(float(r.accuracy))]
        for r in report.records
    ]


def report_json(report: AccuracyReport) -> Dict:
    summaries = []
    for (stack, temp, vg, levels, sigma), s in report.summaries().items():
        summaries.append({
            'stack': stack, 'T': temp, 'vg_read': vg, 'L': levels, 'sigma': sigma,
            'n': s.n, 'mean': s.mean, 'std': s.std, 'min': s.min, 'max': s.max,
        })
    return {
        'generated': report.generated,
        'columns': list(CSV_FIELDS),
        'records': [dict(zip(CSV_FIELDS, [r.gate_stack, r.temperature, r.vg_read, r.levels, r.sigma, r.trial,
                                          r.accuracy])) for r in report.records],
        'summaries': summaries,
    }


def save_report(report: AccuracyReport, csv_path: PathLike, json_path: Optional[PathLike] = None) -> Tuple[Path, Path]:
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path is not None else csv_path.with_suffix('.json')
    try:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(CSV_FIELDS)
            writer.writerows(_report_rows(report))
        with open(json_path, 'w') as f:
            json.dump(report_json(report), f, indent=2)
    except OSError as e:
        raise OSError(e.errno, f"Cannot write report to {csv_path}: {e.strerror}") from e
    logger.info(f"Report with {len(report.records)} records saved to {csv_path}")
    return csv_path, json_path


def load_report(csv_path: PathLike) -> AccuracyReport:
    csv_path = Path(csv_path)
    try:
        with open(csv_path, newline='') as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise OSError(e.errno, f"Cannot read report {csv_path}: {e.strerror}") from e
    if not rows or tuple(rows[0]) != CSV_FIELDS:
        raise ReportFormatError(f"{csv_path}: header must be {','.join(CSV_FIELDS)}")
    records = []
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_FIELDS):
            raise ReportFormatError(f"{csv_path}: line {number} has {len(row)} columns, expected {len(CSV_FIELDS)}")
        try:
            records.append(AccuracyRecord(
                gate_stack=row[0], temperature=float(row[1]), vg_read=float(row[2]), levels=int(row[3]),
                sigma=float(row[4]), trial=int(row[5]), accuracy=float(row[6]),
            ))
        except ValueError as e:
            raise ReportFormatError(f"{csv_path}: line {number}: {e}") from e
    return AccuracyReport(records)


def save_history(history: List[Dict], path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['epoch', 'train_loss', 'test_accuracy'])
        for entry in history:
            accuracy = entry.get('test_accuracy')
            writer.writerow([entry['epoch'], repr(float(entry['train_loss'])),
                             '' if accuracy is None else repr(float(accuracy))])
