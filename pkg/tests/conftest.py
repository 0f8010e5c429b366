import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import desk  # noqa: E402


@pytest.fixture(scope="session")
def known_psf():
    return desk.known_psf_run()


@pytest.fixture(scope="session")
def unknown_psf_s():
    return desk.unknown_psf_run("model_s", looks=2, n_test=6)


@pytest.fixture(scope="session")
def unknown_psf_r():
    return desk.unknown_psf_run("model_r", looks=32, n_test=4)


def pytest_terminal_summary(terminalreporter):
    if desk.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(desk.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
