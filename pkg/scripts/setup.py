#!/usr/bin/env python3
"""
Setup script for the Wildnet deer warning pipeline
Installs dependencies, creates .env and the output directories, then checks
that the configured OBU endpoint parses and the bundled scenario loads.
"""

import argparse
import os
import shutil
import subprocess
import sys
from pathlib import Path
from typing import List, Optional, Tuple

ROOT = Path(__file__).resolve().parent.parent
OUTPUT_DIRS = ('logs', 'reports')
BUNDLED_SCENARIO = Path('fixtures') / 'marshill_small.json'


def _with_src(root: Path) -> None:
    src = str(root / 'src')
    if src not in sys.path:
        sys.path.insert(0, src)


def create_directories(root: Path) -> List[Path]:
    """Create the log and report directories; returns the ones that were missing."""
    created = []
    for name in OUTPUT_DIRS:
        directory = root / name
        if not directory.is_dir():
            directory.mkdir(parents=True)
            created.append(directory)
    return created


def create_env_file(root: Path) -> Tuple[bool, str]:
    """Copy .env.template to .env unless .env already exists."""
    env_file = root / '.env'
    env_template = root / '.env.template'

    if env_file.exists():
        return True, ".env file already exists"
    if not env_template.exists():
        return False, ".env.template not found"
    shutil.copy(env_template, env_file)
    return True, "Created .env file from template"


def check_obu_endpoint(root: Path) -> Tuple[bool, str]:
    """Validate WILDNET_OBU_ENDPOINT from the process environment, else from .env, else the default."""
    _with_src(root)
    from dotenv import dotenv_values
    from modules.errors import ConfigurationError
    from modules.settings import DEFAULT_OBU_ENDPOINT, OBU_ENDPOINT_ENV, parse_endpoint

    endpoint = os.environ.get(OBU_ENDPOINT_ENV)
    if endpoint is None and (root / '.env').exists():
        endpoint = dotenv_values(root / '.env').get(OBU_ENDPOINT_ENV)
    if endpoint is None:
        endpoint = DEFAULT_OBU_ENDPOINT

    try:
        host, port = parse_endpoint(endpoint)
    except ConfigurationError as e:
        return False, f"{OBU_ENDPOINT_ENV}: {e}"
    return True, f"OBU endpoint {host}:{port}"


def check_bundled_scenario(root: Path) -> Tuple[bool, str]:
    """Load the bundled scenario and its detection log."""
    _with_src(root)
    from modules.data_ingestion import ReplayDetector
    from modules.errors import WildnetError
    from modules.scenario import load_scenario

    path = root / BUNDLED_SCENARIO
    try:
        scenario = load_scenario(path)
        detections = 0
        if scenario.detection_log is not None:
            detections = ReplayDetector.from_jsonl(scenario.detection_log).detection_count
    except WildnetError as e:
        return False, f"Bundled scenario unusable: {e}"
    return True, f"Bundled scenario '{scenario.name}': {scenario.frame_count} frames, {detections} logged detections"


def install_dependencies(root: Path) -> Tuple[bool, str]:
    """Install Python dependencies."""
    try:
        subprocess.run([sys.executable, '-m', 'pip', 'install', '-r', str(root / 'requirements.txt')],
                       check=True, capture_output=True)
    except subprocess.CalledProcessError as e:
        return False, f"Failed to install dependencies: {e}"
    return True, "Dependencies installed successfully"


def main(argv: Optional[List[str]] = None) -> int:
    """Main setup function."""
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument('--skip-install', action='store_true', help="do not run pip install")
    args = parser.parse_args(argv)

    print("🚀 Setting up the Wildnet deer warning pipeline...")
    print()

    if not args.skip_install:
        print("📦 Installing Python dependencies...")
        ok, detail = install_dependencies(ROOT)
        print(f"{'✅' if ok else '❌'} {detail}")
        if not ok:
            return 1

    for directory in create_directories(ROOT):
        print(f"✅ Created {directory.relative_to(ROOT)}/")

    steps = (create_env_file, check_obu_endpoint, check_bundled_scenario)
    failed = False
    for step in steps:
        ok, detail = step(ROOT)
        print(f"{'✅' if ok else '❌'} {detail}")
        failed = failed or not ok

    if failed:
        print("❌ Setup finished with errors")
        return 1

    print()
    print("🎉 Setup completed successfully!")
    print()
    print("Next steps:")
    print("1. Run the tests: pytest")
    print("2. Run the bundled scenario: python src/main.py simulate fixtures/marshill_small.json --no-udp")
    print("3. Watch for alerts on another terminal: python src/main.py listen")
    return 0


if __name__ == '__main__':
    sys.exit(main())
