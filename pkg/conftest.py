"""
Pytest configuration file.
"""
import os
import sys

import pytest

# Make the geossa package importable when running tests without installation
ROOT_DIR = os.path.abspath(os.path.dirname(__file__))
SRC_DIR = os.path.join(ROOT_DIR, "src")
sys.path.insert(0, SRC_DIR)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run benchmark-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
