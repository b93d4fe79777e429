import numpy as np
import pytest

from hipbone.mesh import BoxSpec, LocalMesh, RankGrid
from hipbone.problem import build_problem
from hipbone.transport import run_in_process

ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def segment_mesh():
    """Two 1D linear elements [g0, g1], [g1, g2] on one rank."""
    return LocalMesh(box=BoxSpec(2, 1, 1, 1), grid=RankGrid(1, 1, 1), rank=0,
                     elements=np.array([0, 1]), element_coords=np.zeros((2, 3), dtype=int),
                     node_ids=np.array([[0, 1], [1, 2]]), shared={}, neighbors=())


def global_vector(box, seed):
    return np.random.default_rng(seed).standard_normal(box.N_G)


def distributed(P, fn, box, *args, lam=1.0, algorithm="pairwise", seed=0, **kwargs):
    """Run ``fn(problem, *args)`` on every rank of a P-rank in-process world."""

    def prog(transport):
        prob = build_problem(box, transport, lam=lam, seed=seed, algorithm=algorithm)
        return fn(prob, *args, **kwargs)

    return run_in_process(P, prog, timeout=60.0)


def to_global(results, N_G):
    """Combine per-rank ``(owned ids, values)`` pairs into a global vector."""
    out = np.full(N_G, np.nan)
    for ids, vals in results:
        out[ids] = vals
    assert not np.isnan(out).any()
    return out
