"""
Tests for the project setup script.
"""

import importlib.util
import shutil
import sys
from pathlib import Path

import pytest

from modules.settings import OBU_ENDPOINT_ENV

ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def setup_script(monkeypatch):
    monkeypatch.setattr(sys, 'path', sys.path[:])
    spec = importlib.util.spec_from_file_location('wildnet_setup', ROOT / 'scripts' / 'setup.py')
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def project(tmp_path, bundled_dir):
    shutil.copy(ROOT / '.env.template', tmp_path / '.env.template')
    shutil.copytree(bundled_dir, tmp_path / 'fixtures')
    return tmp_path


def test_creates_missing_output_directories(setup_script, tmp_path):
    (tmp_path / 'logs').mkdir()
    created = setup_script.create_directories(tmp_path)
    assert created == [tmp_path / 'reports']
    assert (tmp_path / 'logs').is_dir() and (tmp_path / 'reports').is_dir()
    assert setup_script.create_directories(tmp_path) == []


def test_env_file_from_template(setup_script, project):
    ok, _ = setup_script.create_env_file(project)
    assert ok
    assert (project / '.env').read_text() == (project / '.env.template').read_text()


def test_existing_env_file_is_kept(setup_script, project):
    (project / '.env').write_text('LOG_LEVEL=DEBUG\n')
    ok, detail = setup_script.create_env_file(project)
    assert ok and 'already exists' in detail
    assert (project / '.env').read_text() == 'LOG_LEVEL=DEBUG\n'


def test_missing_template(setup_script, tmp_path):
    ok, detail = setup_script.create_env_file(tmp_path)
    assert not ok
    assert 'not found' in detail


@pytest.mark.parametrize('env_text, ok, fragment', [
    ('WILDNET_OBU_ENDPOINT=10.0.0.5:4800\n', True, '10.0.0.5:4800'),
    ('WILDNET_OBU_ENDPOINT=obu.local\n', True, 'obu.local:4750'),
    ('WILDNET_OBU_ENDPOINT=10.0.0.5:notaport\n', False, 'non-numeric port'),
    ('WILDNET_OBU_ENDPOINT=:4750\n', False, 'no host'),
    ('LOG_LEVEL=INFO\n', True, '127.0.0.1:4750'),
])
def test_endpoint_read_from_env_file(setup_script, tmp_path, monkeypatch, env_text, ok, fragment):
    monkeypatch.delenv(OBU_ENDPOINT_ENV, raising=False)
    (tmp_path / '.env').write_text(env_text)
    result, detail = setup_script.check_obu_endpoint(tmp_path)
    assert result is ok
    assert fragment in detail


def test_process_environment_wins_over_env_file(setup_script, tmp_path, monkeypatch):
    (tmp_path / '.env').write_text('WILDNET_OBU_ENDPOINT=10.0.0.5:4800\n')
    monkeypatch.setenv(OBU_ENDPOINT_ENV, '192.168.1.9:70000')
    ok, detail = setup_script.check_obu_endpoint(tmp_path)
    assert not ok
    assert 'out of range' in detail


def test_bundled_scenario_check(setup_script, project):
    ok, detail = setup_script.check_bundled_scenario(project)
    assert ok
    assert '300 frames' in detail and '15 logged detections' in detail


def test_bundled_scenario_missing(setup_script, tmp_path):
    ok, detail = setup_script.check_bundled_scenario(tmp_path)
    assert not ok
    assert 'not found' in detail


def test_main_without_install(setup_script, project, monkeypatch, capsys):
    monkeypatch.delenv(OBU_ENDPOINT_ENV, raising=False)
    monkeypatch.setattr(setup_script, 'ROOT', project)

    assert setup_script.main(['--skip-install']) == 0

    assert (project / '.env').exists()
    assert (project / 'logs').is_dir() and (project / 'reports').is_dir()
    out = capsys.readouterr().out
    assert 'Setup completed successfully' in out
    assert 'Installing' not in out


def test_main_reports_bad_endpoint(setup_script, project, monkeypatch, capsys):
    monkeypatch.setenv(OBU_ENDPOINT_ENV, 'obu:0')
    monkeypatch.setattr(setup_script, 'ROOT', project)

    assert setup_script.main(['--skip-install']) == 1
    assert 'Setup finished with errors' in capsys.readouterr().out
