#!/usr/bin/env python3
"""
Tests for experiment configuration, command dispatch, result export and the CLI
"""

import sys
import json
from pathlib import Path
import logging

import numpy as np
import pandas as pd
import pytest

# Add project root to path
project_root = Path(__file__).parent
sys.path.append(str(project_root))

from config import Config, config
from lsh.exceptions import ConfigError
from lsh.experiment import (EXIT_CONDITIONS_NOT_MET, EXIT_FAILURE, EXIT_OK, EXIT_USAGE, dispatch, load_config,
                            parse_config)
from lsh.export import convert_numpy_types, emit, envelope_payload
import run_lsh

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

OSCILLATOR = {'systems': {'oscillator': {'K': 1.0, 'M': 1.0, 'F': 1.0, 'N': 1.0}}}


def experiment(**sections) -> dict:
    data = json.loads(json.dumps(OSCILLATOR))
    data.update(sections)
    return data


@pytest.fixture
def log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, 'LOG_FILE', str(tmp_path / 'logs' / 'lsh.log'))
    return tmp_path


def test_config_defaults():
    cfg = parse_config({'systems': {'osc': {'K': 2.0, 'N': 1.0}}})
    sys_ = cfg.lsh_system()
    assert sys_.name == 'osc'
    assert np.allclose(sys_.M, 1.0) and np.allclose(sys_.F, 1.0)
    assert cfg.simulation.dt == config.DEFAULT_DT
    assert cfg.simulation.paths == config.DEFAULT_PATHS
    assert cfg.simulation.seed is None
    assert cfg.robust.eps == 'auto'
    assert cfg.output.format == 'json'
    assert cfg.digest() == parse_config({'systems': {'osc': {'K': 2.0, 'N': 1.0}}}).digest()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="M not positive definite"):
        parse_config({'systems': {'osc': {'K': 1.0, 'M': -1.0, 'N': 1.0}}})
    with pytest.raises(ConfigError):
        parse_config(experiment(unexpected=True))
    with pytest.raises(ConfigError, match="seed required"):
        parse_config(OSCILLATOR, command='simulate')
    with pytest.raises(ConfigError):
        parse_config(experiment(compose=['oscillator', 'missing']))
    with pytest.raises(ConfigError):
        parse_config(experiment(robust={'eps': -0.1}))

    broken = tmp_path / 'broken.json'
    broken.write_text('{\n  "systems": ,\n}\n', encoding='utf-8')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(broken)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / 'missing.json')


def test_seed_override():
    cfg = parse_config(OSCILLATOR, command='simulate', seed=11)
    assert cfg.simulation.seed == 11


def test_shipped_experiments_load():
    for name, command in (('canonical', 'stability'), ('feedback', 'compose'), ('robust', 'robust')):
        cfg = load_config(project_root / 'experiments' / f'{name}.json', command=command)
        assert cfg.lsh_system() is not None


def test_stability_and_invariant_commands():
    envelope = dispatch('stability', parse_config(OSCILLATOR))
    assert envelope.exit_code == EXIT_OK
    assert envelope.outputs['eps'] == pytest.approx(0.2)
    assert envelope.outputs['eps_window']['eps2_bound'] == pytest.approx(0.4)
    assert envelope.outputs['hurwitz_status'] == 'hurwitz'
    payload = envelope_payload(envelope)
    assert payload['status'] == 'ok'
    assert payload['schema_version'] == config.SCHEMA_VERSION

    envelope = dispatch('invariant', parse_config(OSCILLATOR))
    assert np.allclose(envelope.outputs['invariant']['Pi'], 0.5 * np.eye(2), atol=1e-10)
    assert envelope.outputs['virial']['mean_kinetic'] == pytest.approx(0.25)
    assert envelope.diagnostics['ale_residual'] < 1e-10


def test_conditions_not_met_exit_code():
    envelope = dispatch('stability', parse_config(experiment(robust={'eps': 2.0})))
    assert envelope.exit_code == EXIT_CONDITIONS_NOT_MET

    undamped = {'systems': {'free': {'K': 1.0, 'F': 0.0, 'N': 1.0}}}
    envelope = dispatch('invariant', parse_config(undamped))
    assert envelope.exit_code == EXIT_CONDITIONS_NOT_MET
    assert envelope_payload(envelope)['status'] == 'conditions_not_met'
    assert 'message' in envelope.diagnostics

    strong = {'systems': {'plant': {'K': 1.0, 'N': 1.0}, 'controller': {'K': 1.0, 'N': 1.5}},
              'compose': ['plant', 'controller']}
    envelope = dispatch('compose', parse_config(strong))
    assert envelope.exit_code == EXIT_CONDITIONS_NOT_MET
    assert 'K' in envelope.diagnostics['failing']


def test_compose_round_trip():
    cfg = load_config(project_root / 'experiments' / 'feedback.json', command='compose')
    envelope = dispatch('compose', cfg)
    assert envelope.exit_code == EXIT_OK
    assert envelope.outputs['small_gain']['norm'] == pytest.approx(0.25)
    assert envelope.outputs['robust']['asymptotic_bound'] > 0

    loop = envelope.outputs['loop']
    rebuilt = parse_config({'systems': {'loop': {key: loop[key] for key in ('K', 'M', 'F', 'N')}}}).lsh_system()
    assert np.array_equal(rebuilt.K, np.asarray(loop['K']))
    assert dispatch('stability', parse_config({'systems': {'loop': {key: loop[key] for key in
                                                                    ('K', 'M', 'F', 'N')}}})).exit_code == EXIT_OK


def test_transfer_command():
    data = {'systems': {'oscillator': {'K': 1.0, 'N': 1.0}, 'free': {'K': 1.0, 'F': 0.0, 'N': 1.0}},
            'transfer': {'points': [[0.0, 1.0], [0.0, 0.0]]}}
    envelope = dispatch('transfer', parse_config(data))
    first = envelope.outputs['points'][0]
    assert np.allclose(first['Phi_real'], [[0.0]], atol=1e-12)
    assert np.allclose(first['Phi_imag'], [[-1.0]], atol=1e-12)
    assert np.allclose(envelope.outputs['static_gain'], [[1.0]])

    data['system'] = 'free'
    envelope = dispatch('transfer', parse_config(data))
    assert envelope.outputs['points'][0]['singular']
    assert not envelope.outputs['points'][1]['singular']


def small_simulation(**overrides) -> dict:
    simulation = {'T': 0.5, 'dt': 0.01, 'paths': 20, 'seed': 5, 'sample_paths': 2}
    simulation.update(overrides)
    return experiment(simulation=simulation)


def test_simulate_is_deterministic():
    first = dispatch('simulate', parse_config(small_simulation()))
    second = dispatch('simulate', parse_config(small_simulation()))
    assert first.outputs['scheme'] == 'exact_linear'
    assert first.outputs == second.outputs
    pd.testing.assert_frame_equal(first.tables['trajectory'], second.tables['trajectory'])
    assert len(first.tables['trajectory']) == 2 * 51
    assert list(first.tables['trajectory'].columns) == ['t', 'path', 'q1', 'p1', 'y1']

    reseeded = dispatch('simulate', parse_config(small_simulation(), seed=6))
    assert not first.tables['trajectory'].equals(reseeded.tables['trajectory'])


def test_csv_tables_round_trip(tmp_path):
    envelope = dispatch('simulate', parse_config(small_simulation()))
    out = tmp_path / 'sim.json'
    emit(envelope, out=str(out), fmt='csv')

    payload = json.loads(out.read_text(encoding='utf-8'))
    assert set(payload['table_files']) == {'trajectory', 'moments'}
    restored = pd.read_csv(payload['table_files']['trajectory'], float_precision='round_trip')
    original = envelope.tables['trajectory']
    for column in ('t', 'q1', 'p1', 'y1'):
        assert np.array_equal(restored[column].to_numpy(), original[column].to_numpy())


def test_csv_without_path_goes_to_output_dir(tmp_path, monkeypatch):
    results_dir = tmp_path / 'results'
    monkeypatch.setattr(Config, 'OUTPUT_DIR', str(results_dir))
    envelope = dispatch('simulate', parse_config(small_simulation()))

    written = emit(envelope, out=None, fmt='csv')
    assert Path(written) == results_dir / 'simulate.json'
    payload = json.loads((results_dir / 'simulate.json').read_text(encoding='utf-8'))
    assert payload['command'] == 'simulate'
    trajectory = pd.read_csv(payload['table_files']['trajectory'])
    assert Path(payload['table_files']['trajectory']) == results_dir / 'simulate_trajectory.csv'
    assert len(trajectory) == len(envelope.tables['trajectory'])


def test_cli_csv_request_without_path(log_to_tmp, monkeypatch):
    results_dir = log_to_tmp / 'results'
    monkeypatch.setattr(Config, 'OUTPUT_DIR', str(results_dir))
    config_path = log_to_tmp / 'csv.json'
    data = small_simulation()
    data['output'] = {'format': 'csv'}
    config_path.write_text(json.dumps(data), encoding='utf-8')

    assert run_lsh.main(['simulate', '--config', str(config_path)]) == EXIT_OK
    payload = json.loads((results_dir / 'simulate.json').read_text(encoding='utf-8'))
    assert payload['status'] == 'ok'
    assert (results_dir / 'simulate_trajectory.csv').exists()
    assert not pd.read_csv(results_dir / 'simulate_moments.csv').empty


def test_filter_command():
    data = small_simulation(T=2.0, paths=400, seed=3)
    envelope = dispatch('filter', parse_config(data))
    assert envelope.exit_code == EXIT_OK
    assert envelope.outputs['probe_times'] == pytest.approx([0.5, 1.0, 2.0])
    assert np.allclose(np.ravel(envelope.outputs['closed_form_P']), [1 / 2.5, 1 / 3.0, 1 / 4.0])
    assert envelope.outputs['information_limit_gap'] < 1e-5
    assert envelope.outputs['max_abs_z_cov'] < 5.0
    assert envelope.diagnostics['error_increment_gap'] < 0.05
    assert set(envelope.tables) == {'filter_errors', 'orthogonality'}


def test_robust_command():
    data = small_simulation(T=5.0, paths=500, seed=8, initial='zero', record_times=[0.0, 1.0, 5.0])
    data['robust'] = {'eps': 0.2, 'gamma': 1.0, 'Delta': 0.0}
    envelope = dispatch('robust', parse_config(data))
    assert envelope.exit_code == EXIT_OK
    assert envelope.outputs['bound']['asymptotic_bound'] == pytest.approx(3.75)
    assert envelope.outputs['admissible_paths'] == 500
    assert envelope.outputs['within_envelope']
    assert envelope.outputs['supermartingale']['nonincreasing']
    assert list(envelope.tables['envelope']['t']) == pytest.approx([0.0, 1.0, 5.0])

    data['robust'] = {'eps': 'scan', 'scan_points': 20}
    envelope = dispatch('robust', parse_config(data))
    assert len(envelope.tables['eps_scan']) == 20

    data['robust'] = {'eps': 0.2, 'gamma': 0.0}
    assert dispatch('robust', parse_config(data)).exit_code == EXIT_CONDITIONS_NOT_MET


def test_numpy_conversion():
    converted = convert_numpy_types({'a': np.float64(1.5), 'b': np.arange(3), 'c': 1 + 2j, 'd': np.bool_(True)})
    assert converted == {'a': 1.5, 'b': [0, 1, 2], 'c': [1.0, 2.0], 'd': True}
    assert json.loads(json.dumps(converted)) == converted


def test_main_exit_codes(log_to_tmp):
    config_path = log_to_tmp / 'oscillator.json'
    config_path.write_text(json.dumps(OSCILLATOR), encoding='utf-8')
    out = log_to_tmp / 'results' / 'stability.json'

    assert run_lsh.main(['stability', '--config', str(config_path), '--out', str(out)]) == EXIT_OK
    payload = json.loads(out.read_text(encoding='utf-8'))
    assert payload['command'] == 'stability'
    assert payload['status'] == 'ok'

    assert run_lsh.main(['bogus', '--config', str(config_path)]) == EXIT_USAGE
    with pytest.raises(SystemExit) as excinfo:
        run_lsh.main(['stability'])
    assert excinfo.value.code == EXIT_USAGE

    # stochastic command without a seed
    assert run_lsh.main(['simulate', '--config', str(config_path)]) == EXIT_FAILURE

    strong = {'systems': {'plant': {'K': 1.0, 'N': 1.0}, 'controller': {'K': 1.0, 'N': 1.5}}}
    config_path.write_text(json.dumps(strong), encoding='utf-8')
    assert run_lsh.main(['compose', '--config', str(config_path), '--out', str(out)]) == EXIT_CONDITIONS_NOT_MET


def main():
    """Run all tests"""
    logger.info("=" * 60)
    logger.info("RUNNING CLI TESTS")
    logger.info("=" * 60)
    sys.exit(pytest.main([__file__, '-v']))


if __name__ == "__main__":
    main()
