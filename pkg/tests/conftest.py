import numpy as np
import pytest

from biotfem.mesh import build_edges, unit_square_mesh


@pytest.fixture(scope="session")
def mesh_topo():
    cache = {}

    def get(N):
        if N not in cache:
            m = unit_square_mesh(N)
            cache[N] = (m, build_edges(m))
        return cache[N]

    return get


def single_triangle_mesh(coords):
    """A one-cell mesh with the given (counterclockwise) vertex coordinates."""
    from biotfem.mesh import Mesh

    return Mesh(vertices=np.asarray(coords, dtype=float), triangles=np.array([[0, 1, 2]]), N=1)


# acceptance lines, printed once at the end of the session
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def accept():
    def record(label: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE.append((label, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
