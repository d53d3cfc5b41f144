from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "fixtures"
CONFIG_DIR = REPO_ROOT / "configs"

FIXTURE_NAMES = ["marie_deepseek", "marie_gptoss", "alec_deepseek", "alec_gptoss"]


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def config_dir() -> Path:
    return CONFIG_DIR


def fixture_path(name: str) -> Path:
    return FIXTURE_DIR / f"{name}.json"
