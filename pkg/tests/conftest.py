import json
import sys
from pathlib import Path

import numpy as np
import pytest

from flatcyl.group import FactorSpec, GroupSpec, parse_group_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def cplx(m):
    return np.asarray(m, dtype=complex)


def complex_spec(gens, projectivized=False):
    fac = FactorSpec("complex-special-linear-2", 2, projectivized)
    return GroupSpec((fac,), tuple((cplx(g),) for g in gens))


def real_spec(gens, d):
    fac = FactorSpec("real-special-linear", d)
    return GroupSpec((fac,), tuple((np.asarray(g, dtype=float),) for g in gens))


def schottky_pair():
    """A classical real Schottky pair: hyperbolics with far-apart axes."""
    a = np.array([[np.cosh(1.5), np.sinh(1.5)], [np.sinh(1.5), np.cosh(1.5)]])
    r = np.array([[np.cos(np.pi / 4), -np.sin(np.pi / 4)], [np.sin(np.pi / 4), np.cos(np.pi / 4)]])
    b = r @ a @ r.T
    return a, b


@pytest.fixture
def real_sl2():
    a, b = schottky_pair()
    return real_spec([a, b], 2)


@pytest.fixture
def sl3():
    a = np.diag([np.e, 1.0, 1 / np.e])
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    b = q @ np.diag([2.0, 0.9, 1 / 1.8]) @ q.T
    return real_spec([a, b], 3)


def load_config(name):
    return parse_group_config((CONFIGS / name).read_text())


@pytest.fixture(scope="session")
def a3():
    return load_config("a3.json")


@pytest.fixture(scope="session")
def a3_diagonal():
    return load_config("a3_diagonal.json")


def config_doc(factors, generators, tolerance=1e-10):
    return json.dumps({"factors": factors, "generators": generators, "tolerance": tolerance})


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
