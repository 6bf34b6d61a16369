import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable

from cnnlab import device_map, load_device_profile, parse_model
from cnnlab.fixtures import fixture_text


@pytest.fixture(scope="session")
def alexnet8():
    return parse_model(fixture_text("alexnet8.model"))


@pytest.fixture(scope="session")
def alexnet13():
    return parse_model(fixture_text("alexnet13.model"))


@pytest.fixture(scope="session")
def cudnn_profile():
    return load_device_profile(fixture_text("k40-cudnn.profile"))


@pytest.fixture(scope="session")
def cublas_profile():
    return load_device_profile(fixture_text("k40-cublas.profile"))


@pytest.fixture(scope="session")
def fpga_profile():
    return load_device_profile(fixture_text("de5-fpga.profile"))


@pytest.fixture(scope="session")
def gpu_fpga_devices(cudnn_profile, fpga_profile):
    return device_map([cudnn_profile, fpga_profile])
