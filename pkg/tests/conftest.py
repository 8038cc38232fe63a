import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from systola.lattice import hexagonal_lattice, square_lattice
from systola.mesh import (bump_factor, conformal_scale, flat_torus_mesh, metric_perturbation,
                          normalize_volume)

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def smooth_metric(eps, phase):
    """Anisotropic, spatially varying metric tensor field on fractional coordinates."""
    def tensor(x):
        a = 2 * np.pi * x
        s = eps * np.sin(a[:, 0] + phase[0]) * np.cos(a[:, 1] + phase[1])
        c = 0.5 * eps * np.cos(a[:, 0] - a[:, 1] + phase[2])
        t = np.zeros((len(x), 2, 2))
        t[:, 0, 0] = 1 + s
        t[:, 1, 1] = 1 - 0.5 * s
        t[:, 0, 1] = t[:, 1, 0] = c
        return t
    return tensor


def hex_mesh(k):
    return normalize_volume(flat_torus_mesh(hexagonal_lattice(), k))


def square_mesh(k):
    return flat_torus_mesh(square_lattice(2), k)


def bump_mesh(k, amplitude=0.2, center=None):
    base = flat_torus_mesh(hexagonal_lattice(), k)
    return normalize_volume(conformal_scale(base, bump_factor(base, amplitude=amplitude, center=center)))


def stretch_mesh(k, factor=1.2):
    base = flat_torus_mesh(hexagonal_lattice(), k)
    return normalize_volume(metric_perturbation(base, lambda x: np.diag([factor ** 2, 1.0])))


def aniso_mesh(k, eps=0.25, phase=(0.3, 1.1, 2.0)):
    base = flat_torus_mesh(hexagonal_lattice(), k)
    return normalize_volume(metric_perturbation(base, smooth_metric(eps, phase)))


@pytest.fixture(scope="session")
def hex16():
    return hex_mesh(16)


@pytest.fixture(scope="session")
def hex32():
    return hex_mesh(32)


@pytest.fixture(scope="session")
def square16():
    return square_mesh(16)


@pytest.fixture(scope="session")
def bump16():
    return bump_mesh(16)


@pytest.fixture(scope="session")
def bump32():
    return bump_mesh(32)


@pytest.fixture(scope="session")
def aniso16():
    return aniso_mesh(16)


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE = {}


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE.setdefault(number, []).append((title, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        ok = all(p for _, p, _ in parts)
        title = parts[0][0]
        detail = "; ".join(d for _, _, d in parts if d)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
