import csv
import json

import numpy as np
import pytest

from conftest import idx_images_bytes, idx_labels_bytes
from crossbar import ideal_layers, sample_array_variation
from data_io import (
    ConfigError,
    ContainerError,
    CountMismatchError,
    Dataset,
    IdxFormatError,
    MagicNumberError,
    ReportFormatError,
    ShapeError,
    Split,
    TruncatedFileError,
    load_checkpoint,
    load_crossbar,
    load_mnist,
    load_mnist_idx,
    load_report,
    parse_config,
    parse_config_text,
    parse_idx_images,
    read_container,
    resolved_config_text,
    save_checkpoint,
    save_crossbar,
    save_history,
    save_report,
    write_container,
)
from device_model import GateStack, GateStackConfig
from experiments import AccuracyRecord, AccuracyReport, BiasMode
from network import MLPModel, TrainConfig, export_quantized

GS_II = GateStackConfig.get_params(GateStack.GS_II)


def test_load_mnist_plain_and_gzipped(mnist_dir):
    test_set = load_mnist(mnist_dir, 'test')
    assert test_set.images.shape == (4, 784)
    assert test_set.labels.tolist() == [7, 2, 1, 0]
    assert test_set.images[0, 0] == 0.0
    assert test_set.images[0, 1] == 1.0
    assert test_set.split is Split.TEST
    train_set = load_mnist(mnist_dir, Split.TRAIN)
    assert len(train_set) == 6
    assert train_set.labels.tolist() == [0, 1, 2, 3, 4, 5]


def test_missing_mnist_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path / 'absent')
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path)


def test_swapped_idx_paths(mnist_dir):
    with pytest.raises(MagicNumberError, match='label file'):
        load_mnist_idx(mnist_dir / 't10k-labels-idx1-ubyte', mnist_dir / 't10k-images-idx3-ubyte')


def test_idx_count_mismatch(mnist_dir):
    with pytest.raises(CountMismatchError):
        load_mnist_idx(mnist_dir / 't10k-images-idx3-ubyte', mnist_dir / 'train-labels-idx1-ubyte.gz')


def test_idx_structural_errors():
    good = idx_images_bytes(np.zeros((2, 28, 28)))
    with pytest.raises(TruncatedFileError):
        parse_idx_images(good[:-1])
    with pytest.raises(TruncatedFileError):
        parse_idx_images(good[:10])
    with pytest.raises(IdxFormatError):
        parse_idx_images(good + b'\x00')
    with pytest.raises(ShapeError):
        parse_idx_images(idx_images_bytes(np.zeros((2, 27, 28))))
    with pytest.raises(MagicNumberError):
        parse_idx_images(idx_images_bytes(np.zeros((1, 28, 28)), magic=2050))


def test_out_of_range_label(tmp_path):
    (tmp_path / 'images').write_bytes(idx_images_bytes(np.zeros((1, 28, 28))))
    (tmp_path / 'labels').write_bytes(idx_labels_bytes(np.array([10])))
    with pytest.raises(IdxFormatError):
        load_mnist_idx(tmp_path / 'images', tmp_path / 'labels')


def test_dataset_is_read_only():
    data = Dataset(np.full((3, 4), 0.5), [0, 1, 2])
    with pytest.raises(ValueError):
        data.images[0, 0] = 1.0
    assert len(data.head(2)) == 2
    with pytest.raises(CountMismatchError):
        Dataset(np.zeros((3, 4)), [0, 1])
    with pytest.raises(IdxFormatError):
        Dataset(np.full((1, 4), 2.0), [0])


def test_empty_config_gives_defaults():
    cfg = parse_config()
    assert cfg.params == GS_II
    assert cfg.dims == [784, 200, 10]
    assert (cfg.train.epochs, cfg.train.batch_size, cfg.train.levels) == (30, 64, 2)
    assert cfg.sweep.temperatures == [233.0, 300.0, 398.0]
    assert (cfg.sweep.sigma, cfg.sweep.trials, cfg.sweep.adc_bits) == (0.15, 10, 8)
    assert cfg.bias_mode is BiasMode.FIXED
    assert cfg.data_dir is None


def test_config_values_and_lists():
    cfg = parse_config_text(
        "[device]\nstack = GS-I\nkappa_vt = -0.002\n"
        "[sweep]\nvg_read = 0.3, 0.5,0.7\nmode = per-temperature\nnorm_temp = 300\n"
        "[adc]\nbits = off\n"
    )
    assert cfg.params.id is GateStack.GS_I
    assert cfg.params.kappa_vt == -0.002
    assert cfg.sweep.gate_stack == cfg.params
    assert cfg.sweep.vg_read_values == [0.3, 0.5, 0.7]
    assert cfg.sweep.norm_temp == 300.0
    assert cfg.sweep.adc_bits is None
    assert cfg.bias_mode is BiasMode.PER_TEMPERATURE


def test_config_sets_window_drift():
    cfg = parse_config_text("[device]\nstack = GS-II\nkappa_mw = -0.001\n")
    assert cfg.params.kappa_mw == -0.001
    assert cfg.params.window_at(398.0) == pytest.approx(1.0 - 0.098)
    assert 'kappa_mw = -0.001' in resolved_config_text(cfg)


def test_config_reports_key_and_line():
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text("[sweep]\n\nsigma = -0.1\n")
    assert excinfo.value.key == 'sigma'
    assert excinfo.value.line == 3
    assert "line 3, key 'sigma'" in str(excinfo.value)


@pytest.mark.parametrize('text', [
    "[network]\nsize = 3\n",
    "[train]\nspeed = 2\n",
    "[train]\nepochs = many\n",
    "[train]\nlevels = 3\n",
    "[device]\nstack = GS-III\n",
    "[device]\nvth_lrs_ref = 2.0\n",
    "[sweep]\ntemperatures = 100\n",
    "not an ini file",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_missing_data_dir_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text(f"[paths]\ndata_dir = {tmp_path / 'nowhere'}\n")
    assert excinfo.value.key == 'data_dir'


def test_overrides_beat_the_file(tmp_path):
    path = tmp_path / 'run.ini'
    path.write_text("[sweep]\ntrials = 5\nsigma = 0.1\n")
    cfg = parse_config(path, {'sweep': {'trials': '3'}, 'train': {'levels': '4'}})
    assert cfg.sweep.trials == 3
    assert cfg.sweep.sigma == 0.1
    assert cfg.train.levels == 4
    assert cfg.sweep.levels == 4
    with pytest.raises(ConfigError) as excinfo:
        parse_config(path, {'sweep': {'trials': '0'}})
    assert excinfo.value.line is None


def test_resolved_config_round_trip():
    cfg = parse_config_text(
        "[device]\nstack = GS-I\nkappa_vt = -0.0015\n[train]\ndims = 16,8,4\nloss = mse-sigmoid\n"
        "[sweep]\nvg_read = 0.4,0.6\nnorm_temp = 300\ntrials = 2\n[adc]\nbits = 6\nfull_scale = 12.5\n"
    )
    again = parse_config_text(resolved_config_text(cfg))
    assert again.params == cfg.params
    assert again.sweep == cfg.sweep
    assert again.dims == cfg.dims == [16, 8, 4]
    assert again.train.loss == cfg.train.loss
    assert again.bias_mode is cfg.bias_mode
    assert resolved_config_text(again) == resolved_config_text(cfg)


def test_checkpoint_round_trip(tmp_path):
    model = MLPModel.initialize([16, 8, 4], seed=2)
    cfg = TrainConfig()
    history = [{'epoch': 1, 'train_loss': 0.5, 'test_accuracy': None}]
    save_checkpoint(tmp_path / 'ckpt.fefet', model, cfg, history)
    loaded = load_checkpoint(tmp_path / 'ckpt.fefet')
    assert loaded.model.dims == [16, 8, 4]
    for a, b in zip(loaded.model.shadow_weights, model.shadow_weights):
        np.testing.assert_array_equal(a, b)
    assert loaded.levels == 2
    assert loaded.fraction_set.tolist() == [0.0, 1.0]
    assert loaded.history == history
    expected = export_quantized(model, [0.0, 1.0], 2)
    for a, b in zip(loaded.quantized().weights, expected.weights):
        np.testing.assert_array_equal(a, b)


def test_crossbar_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    weights = [np.where(rng.random((5, 3)) < 0.5, -1.0, 1.0), np.where(rng.random((4, 2)) < 0.5, -1.0, 1.0)]
    layers = [sample_array_variation(layer, 0.15, 3) for layer in ideal_layers(weights, GS_II, 2, np.array([0.0, 1.0]))]
    save_crossbar(tmp_path / 'xbar.fefet', layers, {'trial': 0})
    loaded, metadata = load_crossbar(tmp_path / 'xbar.fefet')
    assert metadata['trial'] == 0
    assert len(loaded) == 2
    for a, b in zip(loaded, layers):
        assert a.params == b.params
        np.testing.assert_array_equal(a.levels_plus, b.levels_plus)
        np.testing.assert_array_equal(a.eps_minus, b.eps_minus)


def test_crossbar_snapshot_detects_parameter_tampering(tmp_path):
    layers = ideal_layers([np.ones((2, 2))], GS_II, 2, np.array([0.0, 1.0]))
    path = tmp_path / 'xbar.fefet'
    save_crossbar(path, layers)
    metadata, arrays = read_container(path, 'crossbar')
    metadata['params']['kappa_vt'] = -0.002
    write_container(path, 'crossbar', metadata, arrays)
    with pytest.raises(ContainerError):
        load_crossbar(path)


def test_container_rejects_foreign_files(tmp_path):
    junk = tmp_path / 'junk.fefet'
    junk.write_bytes(b'NOTAFEFETFILE' + bytes(32))
    with pytest.raises(ContainerError):
        load_checkpoint(junk)
    save_crossbar(tmp_path / 'xbar.fefet', ideal_layers([np.ones((2, 2))], GS_II, 2, np.array([0.0, 1.0])))
    with pytest.raises(ContainerError):
        load_checkpoint(tmp_path / 'xbar.fefet')


def sample_report():
    return AccuracyReport([
        AccuracyRecord('GS-II', 300.0, 0.5, 2, 0.15, 0, 0.9),
        AccuracyRecord('GS-II', 300.0, 0.5, 2, 0.15, 1, 0.95),
        AccuracyRecord('GS-II', 398.0, 0.5, 2, 0.15, 0, 0.1 + 0.2),
    ])


def test_report_round_trip(tmp_path):
    report = sample_report()
    csv_path, json_path = save_report(report, tmp_path / 'out' / 'sweep.csv')
    assert json_path == tmp_path / 'out' / 'sweep.json'
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == 'stack,T,vg_read,L,sigma,trial,accuracy'
    assert load_report(csv_path) == report
    summaries = json.loads(json_path.read_text())['summaries']
    assert [s['n'] for s in summaries] == [2, 1]
    assert summaries[1]['std'] is None


def test_empty_report_has_header_only(tmp_path):
    csv_path, json_path = save_report(AccuracyReport(), tmp_path / 'empty.csv')
    assert csv_path.read_text().splitlines() == ['stack,T,vg_read,L,sigma,trial,accuracy']
    assert json.loads(json_path.read_text())['records'] == []
    assert load_report(csv_path).records == []


def test_malformed_reports(tmp_path):
    bad_header = tmp_path / 'bad.csv'
    bad_header.write_text('a,b,c\n')
    with pytest.raises(ReportFormatError):
        load_report(bad_header)
    bad_row = tmp_path / 'row.csv'
    bad_row.write_text('stack,T,vg_read,L,sigma,trial,accuracy\nGS-II,300.0,0.5,2,0.15,0,1.5\n')
    with pytest.raises(ReportFormatError):
        load_report(bad_row)


def test_save_history(tmp_path):
    path = tmp_path / 'history.csv'
    save_history([{'epoch': 1, 'train_loss': 0.25, 'test_accuracy': 0.5},
                  {'epoch': 2, 'train_loss': 0.125, 'test_accuracy': None}], path)
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows == [['epoch', 'train_loss', 'test_accuracy'], ['1', '0.25', '0.5'], ['2', '0.125', '']]
