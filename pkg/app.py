"""
Fe-FinFET CIM simulator - command line entry point

    python3 app.py train        --data ./mnist --out results
    python3 app.py characterize --stack GS-I --vg 0.4,0.5,0.6
    python3 app.py sweep        --data ./mnist --trials 10
    python3 app.py optimize     --data ./mnist --vg 0.3,0.4,0.5,0.6,0.7,0.8,0.9
    python3 app.py report       --report results/sweep.csv

MNIST IDX files (train-images-idx3-ubyte, ... or their .gz versions) are not
downloaded; point --data or MNIST_DIR at the directory holding them.
"""
import argparse
import csv
import json
import logging
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from crossbar import achievable_fractions, sample_array_variation, ideal_layers
from data_io import (
    ConfigError,
    RunConfig,
    load_checkpoint,
    load_mnist,
    load_report,
    parse_config,
    resolved_config_text,
    save_checkpoint,
    save_crossbar,
    save_history,
    save_report,
)
from device_model import (
    T_MAX_VALID,
    T_MIN_VALID,
    GateStack,
    GateStackConfig,
    MemoryState,
    conductance_vs_temperature,
    id_vg_curve,
    max_safe_temperature,
    memory_window_vs_thickness,
    read_bias_window,
)
from experiments import (
    BiasMode,
    format_report,
    optimize_design,
    optimize_read_bias,
    temperature_sweep,
    trial_seed,
)
from network import MLPModel, evaluate, export_quantized, forward_quantized, train

# Load environment variables
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CHECKPOINT_NAME = 'checkpoint.fefet'
VG_SWEEP = np.round(np.linspace(-0.5, 1.5, 201), 6)
CHARACTERIZE_TEMPS = np.linspace(T_MIN_VALID, T_MAX_VALID, 51)
THICKNESSES = [t * 1e-9 for t in range(2, 13)]
MIN_ON_OFF = 1e3


def configure_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, os.environ.get('LOG_LEVEL', 'INFO').upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='INI run configuration')
    common.add_argument('--out', help='output directory (default: FEFETSIM_OUT or ./results)')
    common.add_argument('--seed', type=int, help='training seed and Monte Carlo master seed')
    common.add_argument('--stack', choices=[s.value for s in GateStack], help='gate stack preset')
    common.add_argument('--levels', type=int, choices=[2, 4, 8], help='conductance levels per device')
    common.add_argument('--vg', help='comma-separated read gate biases in volts')
    common.add_argument('--temps', help='comma-separated temperatures in kelvin')
    common.add_argument('--trials', type=int, help='Monte Carlo trials per cell')
    common.add_argument('--checkpoint', help='checkpoint path (default: <out>/checkpoint.fefet)')
    common.add_argument('--data', help='directory holding the MNIST IDX files (default: MNIST_DIR)')
    common.add_argument('--report', help='report CSV path')
    common.add_argument('--mode', choices=[m.value for m in BiasMode], help='read-bias optimization mode')
    common.add_argument('--workers', type=int, help='thread pool width')
    common.add_argument('--epochs', type=int, help='training epochs')
    common.add_argument('-v', '--verbose', action='store_true', help='debug logging')

    parser = argparse.ArgumentParser(
        prog='fefetsim',
        description='Temperature-resilient Fe-FinFET compute-in-memory inference simulator',
    )
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True
    commands.add_parser('train', parents=[common], help='train the quantized MLP at 300 K and write a checkpoint')
    commands.add_parser('characterize', parents=[common], help='dump Id-Vg, G(T), memory-window and read-window CSVs')
    commands.add_parser('sweep', parents=[common], help='hardware inference across temperatures and trials')
    optimize = commands.add_parser('optimize', parents=[common], help='search the read-bias grid')
    optimize.add_argument('--design', action='store_true', help='also search over both gate stack presets')
    commands.add_parser('report', parents=[common], help='pretty-print a saved report')
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Dict[str, str]]:
    flags = {
        ('device', 'stack'): args.stack,
        ('train', 'levels'): args.levels,
        ('train', 'seed'): args.seed,
        ('train', 'epochs'): args.epochs,
        ('train', 'workers'): args.workers,
        ('sweep', 'vg_read'): args.vg,
        ('sweep', 'temperatures'): args.temps,
        ('sweep', 'trials'): args.trials,
        ('sweep', 'master_seed'): args.seed,
        ('sweep', 'workers'): args.workers,
        ('sweep', 'mode'): args.mode,
        ('paths', 'out_dir'): args.out,
        ('paths', 'checkpoint'): args.checkpoint,
    }
    overrides: Dict[str, Dict[str, str]] = {}
    for (section, key), value in flags.items():
        if value is not None:
            overrides.setdefault(section, {})[key] = str(value)
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(args.config, _overrides(args))
    cfg.data_dir = args.data or cfg.data_dir or os.environ.get('MNIST_DIR')
    cfg.out_dir = cfg.out_dir or os.environ.get('FEFETSIM_OUT', 'results')
    cfg.checkpoint = cfg.checkpoint or str(Path(cfg.out_dir) / CHECKPOINT_NAME)
    if cfg.train.levels > 2 and cfg.train.fraction_set is None:
        cfg.train = replace(cfg.train, fraction_set=achievable_fractions(cfg.params, cfg.train.levels))
    return cfg


def _require_data(cfg: RunConfig) -> str:
    if not cfg.data_dir:
        raise FileNotFoundError("No MNIST directory given: pass --data or set MNIST_DIR")
    return cfg.data_dir


def _write_provenance(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / 'resolved_config.ini').write_text(resolved_config_text(cfg), encoding='utf-8')


def _log_progress(update: Dict):
    if update.get('type') == 'progress':
        logger.debug(update['message'])
    else:
        logger.info(update['message'])


def _write_rows(path: Path, header: List[str], rows: List[List]):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    data_dir = _require_data(cfg)
    train_set = load_mnist(data_dir, 'train')
    test_set = load_mnist(data_dir, 'test')
    model = MLPModel.initialize(cfg.dims, cfg.train.seed, cfg.train.levels)
    trained, history = train(model, train_set, cfg.train, test_set, progress_callback=_log_progress)

    out = Path(cfg.out_dir)
    _write_provenance(cfg, out)
    save_checkpoint(cfg.checkpoint, trained, cfg.train, history)
    save_history(history, out / 'history.csv')

    qnet = export_quantized(trained, cfg.train.fraction_set, cfg.train.levels)
    accuracy = evaluate(lambda xb: forward_quantized(qnet, xb), test_set)
    print(f"Software {cfg.train.levels}-level test accuracy: {accuracy * 100:.2f}%")
    print(f"Checkpoint: {cfg.checkpoint}")
    return EXIT_OK


def cmd_characterize(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = cfg.params
    levels = cfg.train.levels
    out = Path(cfg.out_dir)
    _write_provenance(cfg, out)

    rows = []
    for temp in cfg.sweep.temperatures:
        for level in range(levels):
            for vg, current in id_vg_curve(params, MemoryState(level, levels), temp, VG_SWEEP, cfg.sweep.vd_read):
                rows.append([params.label, temp, level, vg, repr(current)])
    _write_rows(out / 'id_vg.csv', ['stack', 'T', 'level', 'vg', 'id'], rows)

    rows = []
    for vg in cfg.sweep.vg_read_values:
        for row in conductance_vs_temperature(params, levels, vg, CHARACTERIZE_TEMPS):
            rows.append([params.label, vg, row['temperature'], row['level'], repr(row['conductance'])])
    _write_rows(out / 'conductance_vs_temperature.csv', ['stack', 'vg_read', 'T', 'level', 'conductance'], rows)

    rows = [[row['t_fe'], row['memory_window']] for row in memory_window_vs_thickness(params.ec, THICKNESSES)]
    _write_rows(out / 'memory_window.csv', ['t_fe', 'memory_window'], rows)

    window = read_bias_window(params, cfg.sweep.temperatures)
    rows = []
    for vg in cfg.sweep.vg_read_values:
        inside = window is not None and window[0] <= vg <= window[1]
        safe = max_safe_temperature(params, vg, MIN_ON_OFF, CHARACTERIZE_TEMPS)
        rows.append([params.label, vg, window[0] if window else '', window[1] if window else '',
                     int(inside), '' if safe is None else safe])
    _write_rows(out / 'read_window.csv',
                ['stack', 'vg_read', 'window_low', 'window_high', 'inside_window', 'max_safe_T'], rows)

    if window is None:
        print(f"{params.label}: no read bias keeps both states separated over {cfg.sweep.temperatures} K")
    else:
        print(f"{params.label}: read-bias window {window[0]:.3f} V .. {window[1]:.3f} V")
    print(f"Characterization written to {out}")
    return EXIT_OK


def _hardware_inputs(cfg: RunConfig):
    checkpoint = load_checkpoint(cfg.checkpoint)
    qnet = checkpoint.quantized()
    if qnet.levels != cfg.sweep.levels:
        logger.info(f"Checkpoint holds {qnet.levels}-level weights; sweeping L={qnet.levels}")
        cfg.sweep = replace(cfg.sweep, levels=qnet.levels)
    data_dir = _require_data(cfg)
    test_set = load_mnist(data_dir, 'test')
    try:
        calibration = load_mnist(data_dir, 'train').images
    except FileNotFoundError:
        logger.warning("Training split not found; calibrating ADCs on test images")
        calibration = test_set.images
    return qnet, test_set, calibration


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    qnet, test_set, calibration = _hardware_inputs(cfg)
    report = temperature_sweep(cfg.sweep, qnet, test_set, calibration, progress_callback=_log_progress)

    out = Path(cfg.out_dir)
    _write_provenance(cfg, out)
    csv_path, _ = save_report(report, args.report or out / 'sweep.csv')
    layers = ideal_layers(qnet.weights, cfg.params, qnet.levels, qnet.fraction_set)
    seed = trial_seed(cfg.sweep.master_seed, 0)
    save_crossbar(out / 'crossbar_trial0.fefet',
                  [sample_array_variation(layer, cfg.sweep.sigma, seed) for layer in layers],
                  {'trial': 0, 'sigma': cfg.sweep.sigma, 'master_seed': cfg.sweep.master_seed})
    print(format_report(report))
    print(f"Report: {csv_path}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, args: argparse.Namespace) -> int:
    qnet, test_set, calibration = _hardware_inputs(cfg)
    out = Path(cfg.out_dir)
    _write_provenance(cfg, out)

    if getattr(args, 'design', False):
        candidates = [GateStackConfig.get_params(stack) for stack in GateStack]
        choice = optimize_design(cfg.sweep, candidates, qnet, test_set, calibration)
        summary = {'stack': choice.params.label, 'vg_read': choice.vg_read, 'objective': choice.objective,
                   'candidates': [{'stack': p.label, 'vg_read': c.vg_read, 'objective': c.objective}
                                  for p, c in zip(candidates, choice.candidates)]}
        print(f"Best design: {choice.params.label} at {choice.vg_read} V "
              f"(worst-case accuracy {choice.objective * 100:.2f}%)")
    else:
        result = optimize_read_bias(cfg.sweep, qnet, test_set, cfg.bias_mode, calibration, _log_progress)
        save_report(result.report, args.report or out / 'optimize.csv')
        summary = {'stack': cfg.params.label, 'mode': result.mode.value, 'vg_read': result.vg_read,
                   'per_temperature': {str(t): v for t, v in result.per_temperature.items()},
                   'objective': result.objective}
        print(format_report(result.report))
        if result.vg_read is not None:
            print(f"Chosen read bias: {result.vg_read} V (worst-case accuracy {result.objective * 100:.2f}%)")
        else:
            print(f"Per-temperature read biases: {result.per_temperature} "
                  f"(worst-case accuracy {result.objective * 100:.2f}%)")

    with open(out / 'optimize.json', 'w') as f:
        json.dump(summary, f, indent=2)
    return EXIT_OK


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> int:
    path = Path(args.report) if args.report else Path(cfg.out_dir) / 'sweep.csv'
    print(format_report(load_report(path)))
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'characterize': cmd_characterize,
    'sweep': cmd_sweep,
    'optimize': cmd_optimize,
    'report': cmd_report,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    configure_logging(args.verbose)
    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"Cannot read configuration: {e}")
        return EXIT_FAILURE

    try:
        return COMMANDS[args.command](cfg, args)
    except (ValueError, RuntimeError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        logger.debug(traceback.format_exc())
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(run_cli())
