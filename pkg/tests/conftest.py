from __future__ import annotations

from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def ethernet_fixture(data_dir: Path) -> Path:
    return data_dir / "frames_ethernet.pcap"
