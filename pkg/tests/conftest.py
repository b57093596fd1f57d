"""
Pytest configuration and fixtures.

Provides shared Hessians, generators and the registry-driven hooks.
"""

import logging
import os

import allure
import numpy as np
import pytest

from permcd.core.config_loader import ConfigLoader
from permcd.core.test_registry import get_metadata_registry
from permcd.numerics.matrices import build_perturbed_identity

logger = logging.getLogger(__name__)


@pytest.fixture(scope="session")
def config_loader():
    """ConfigLoader over the repository presets"""
    return ConfigLoader()


@pytest.fixture(scope="session")
def test_registry():
    registry = get_metadata_registry()
    logger.info(f"Loaded test registry with {len(registry.entries())} tests")
    return registry


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_hessian():
    """n=6, delta=eps=0.1, linearly spaced weights"""
    return build_perturbed_identity(6, 0.1, 0.1)


@pytest.fixture
def regime_hessian():
    """n=100, delta=eps=0.01, the table operating point"""
    H = build_perturbed_identity(100, 0.01, 0.01)
    allure.attach(f"n={H.n} delta={H.delta} eps={H.eps} d={H.d_label}",
                  name="Hessian", attachment_type=allure.attachment_type.TEXT)
    return H


def pytest_configure(config):
    """Register every marker the registry can apply"""
    config.addinivalue_line("markers", "stochastic: Depends on seeded random draws")
    try:
        registry = get_metadata_registry()
    except Exception as e:
        logger.warning(f"Failed to load the test registry: {e}")
        return
    markers = set()
    for entry in registry.entries().values():
        markers.update(entry.markers)
    for marker in sorted(markers - {"stochastic"}):
        config.addinivalue_line("markers", f"{marker}: Registered from test registry")


def pytest_collection_modifyitems(config, items):
    """
    Keep the tests an execution profile selected and apply its overrides.

    Override markers are inserted first so they win over the registry defaults.
    """
    profile = os.getenv('PERMCD_EXECUTION_PROFILE')
    filtered = os.getenv('PERMCD_FILTERED_TESTS')
    if filtered:
        allowed = set(filtered.split(','))
        items[:] = [item for item in items if item.originalname in allowed]
        logger.info(f"Execution profile {profile or '(none)'}: {len(items)} tests selected")
    if not profile:
        return

    selected = get_metadata_registry().entries(profile)
    for item in items:
        entry = selected.get(item.originalname)
        if entry is None:
            continue
        if entry.timeout:
            item.add_marker(pytest.mark.timeout(entry.timeout), append=False)
        for marker in entry.markers:
            item.add_marker(marker)


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and report.failed and hasattr(report, 'longrepr'):
        allure.attach(str(report.longrepr), name="Failure Details",
                      attachment_type=allure.attachment_type.TEXT)


def pytest_sessionfinish(session, exitstatus):
    logger.info(f"Test session finished with exit status {exitstatus}")
