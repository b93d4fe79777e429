"""Unpreconditioned conjugate gradients on assembled, rank-distributed vectors.

Each iteration performs exactly two global reductions: ``p . Ap`` and the
new ``r . r``. The latter is accumulated while ``r`` is updated, and its
all-reduce is overlapped with the AXPY update of ``x``.
"""

import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import BreakdownError
from .transport import allreduce_begin

BENCHMARK_ITERATIONS = 100


class Reductions:
    """All-reduce front end that counts global reductions."""

    def __init__(self, transport=None):
        self.transport = transport
        self.count = 0

    def begin(self, local):
        self.count += 1
        return allreduce_begin(self.transport, local)

    def sum(self, local):
        return self.begin(local).wait()


def local_dot(x, y):
    """Sequential sum of ``x*y`` in ascending index order."""
    if len(x) == 0:
        return 0.0
    return float(np.cumsum(x * y)[-1])


def global_dot(x, y, comm=None):
    """x . y over all ranks; partials combined in ascending rank order."""
    comm = comm if isinstance(comm, Reductions) else Reductions(comm)
    return comm.sum(local_dot(x, y))


def fused_residual_update(r, Ap, alpha):
    """``r -= alpha * Ap`` in place, returning the local ``r . r`` of the updated vector."""
    r -= alpha * Ap
    rr = local_dot(r, r)
    if not np.isfinite(rr):
        raise BreakdownError("non-finite residual after update")
    return rr


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    history: List[float] = field(default_factory=list)
    reductions: int = 0
    time_operator: float = 0.0
    time_vector: float = 0.0


def cg_run(apply, b, comm=None, mode="fixed", tol=0.0, iterations=BENCHMARK_ITERATIONS,
           max_iters=10_000, energy_callback=None):
    """Solve ``A x = b`` from ``x0 = 0``.

    ``mode="fixed"`` runs exactly ``iterations`` iterations; ``mode="tolerance"``
    stops once ``r.r <= tol`` (absolute, squared norm) or after ``max_iters``.
    """
    if mode not in ("fixed", "tolerance"):
        raise ValueError(f"unknown CG mode {mode!r}")
    comm = comm if isinstance(comm, Reductions) else Reductions(comm)
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rdotr = comm.sum(local_dot(r, r))
    history = [rdotr]
    start = comm.count
    t_op = t_vec = 0.0
    j = 0

    def running():
        if mode == "fixed":
            return j < iterations
        return rdotr > tol and j < max_iters

    while running():
        t0 = time.perf_counter()
        Ap = apply(p)
        t1 = time.perf_counter()
        pAp = comm.sum(local_dot(p, Ap))
        if rdotr == 0.0 and pAp == 0.0:
            # exact solution already reached; fixed mode keeps counting no-op iterations
            alpha = 0.0
        elif not pAp > 0.0:
            raise BreakdownError(f"p.Ap = {pAp!r} <= 0 at iteration {j}: operator is not SPD")
        else:
            alpha = rdotr / pAp
        pending = comm.begin(fused_residual_update(r, Ap, alpha))
        x += alpha * p
        rdotr_new = pending.wait()
        beta = rdotr_new / rdotr if rdotr > 0.0 else 0.0
        p *= beta
        p += r
        rdotr = rdotr_new
        j += 1
        history.append(rdotr)
        t_op += t1 - t0
        t_vec += time.perf_counter() - t1
        if energy_callback is not None:
            energy_callback(j, x)
    return CGResult(x=x, iterations=j, history=history, reductions=comm.count - start,
                    time_operator=t_op, time_vector=t_vec)
