import os
from pathlib import Path

import numpy as np
import pytest

from rulkit.cmapss_io import EngineTrajectory
from rulkit.synthetic import make_engines, write_dataset

PKG_ROOT = Path(__file__).resolve().parents[1]


def real_data_dir(dataset="FD001"):
    """Directory holding the real CMAPSS files, or None when they are not available."""
    candidates = [os.environ.get("RUL_DATA_DIR"), PKG_ROOT / "data", PKG_ROOT / "data" / "CMAPSSData"]
    for c in candidates:
        if c and (Path(c) / f"train_{dataset}.txt").is_file():
            return Path(c)
    return None


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    return write_dataset(tmp_path_factory.mktemp("cmapss"), "FD001", n_train=12, n_test=8, n_regimes=1, seed=3)


@pytest.fixture(scope="session")
def multiregime_dir(tmp_path_factory):
    return write_dataset(tmp_path_factory.mktemp("cmapss6"), "FD002", n_train=12, n_test=6, n_regimes=6, seed=5)


@pytest.fixture(scope="session")
def engines():
    trajs, _ = make_engines(10, seed=11)
    return trajs


def make_traj(engine_id=1, T=5, seed=0):
    rng = np.random.default_rng(seed)
    return EngineTrajectory(engine_id, np.arange(1, T + 1), rng.normal(size=(T, 3)), rng.normal(size=(T, 21)))


_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_")[1]
    if report.when == "setup" and report.skipped:
        _acceptance[name] = ("SKIP", str(report.longrepr[2]) if isinstance(report.longrepr, tuple) else "")
    elif report.when == "call":
        if report.passed:
            _acceptance[name] = ("PASS", "")
        elif report.skipped:
            _acceptance[name] = ("SKIP", str(report.longrepr[2]) if isinstance(report.longrepr, tuple) else "")
        else:
            _acceptance[name] = ("FAIL", report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else "")
    elif report.failed:
        _acceptance[name] = ("FAIL", f"error in {report.when}")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        status, why = _acceptance[name]
        number, _, label = name.partition("_")
        line = f"criterion {int(number):2d} {status:4s} {label.replace('_', ' ')}"
        terminalreporter.write_line(line + (f"  ({why.splitlines()[0]})" if why else ""))
