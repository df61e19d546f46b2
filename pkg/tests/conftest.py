import time

import pytest
import yaml

from slosh.cli import main
from slosh.config import controller_from_dict, load_config

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def tuned_run(tmp_path_factory):
    """One default-config ``tune`` run shared by the whole session."""
    out = tmp_path_factory.mktemp("tune")
    t0 = time.perf_counter()
    code = main(["tune", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    with open(out / "controller.yaml", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return {"code": code, "out": out, "elapsed": elapsed, "doc": doc,
            "params": controller_from_dict(doc)}


@pytest.fixture(scope="session")
def tuned(tuned_run):
    return tuned_run["params"]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
