"""Benchmark driver and performance models.

The figure of merit uses the NekBone FLOP count so numbers stay comparable
with other NekBone studies; the assembled-storage count is available as
:func:`hipbone_flops`.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, HipBoneError
from .exchange import ALGORITHMS, tune_exchange
from .hashing import hash_to_uniform
from .krylov import BENCHMARK_ITERATIONS, Reductions, cg_run
from .mesh import BoxSpec, factor_ranks
from .operator import estimate_bytes_moved
from .problem import assemble_global, build_problem
from .transport import barrier, run_in_process, run_socket_ranks

logger = logging.getLogger(__name__)

REPORT_KEYS = ("E", "N", "P", "N_G", "N_L", "exchange", "time_s", "fom_flops", "throughput",
               "bytes_per_iter", "roofline_flops", "phase_times")


# -- models --------------------------------------------------------------------------------

def nekbone_flops(E, N):
    """FLOPs per CG iteration as counted by NekBone (scattered storage)."""
    return 12 * E * (N + 1) ** 4 + 34 * E * (N + 1) ** 3


def hipbone_flops(E, N):
    """FLOPs per CG iteration with assembled storage."""
    return 12 * E * (N + 1) ** 4 + 19 * E * (N + 1) ** 3 + 10 * E * N ** 3


def bytes_per_cg_iteration(N_G, N_L):
    return 108 * N_G + 80 * N_L


def roofline_bound(N, B, C=math.inf):
    """Operator FLOP rate bound ``min(C, B * flops/bytes)`` per element of degree ``N``."""
    n1 = N + 1
    intensity = Fraction(12 * n1**4 + 18 * n1**3, 8 * N**3 + 68 * n1**3)
    # evaluated exactly and rounded once, so any exact recomputation matches bitwise
    bound = float(intensity * Fraction(B)) if math.isfinite(B) else B
    return min(C, bound)


def throughput(N_G, iterations, ranks, time_s):
    """DOFs x iterations / (ranks x seconds)."""
    if iterations == 0:
        return 0.0
    if time_s <= 0:
        raise ValueError("throughput needs a positive elapsed time")
    return N_G * iterations / (ranks * time_s)


def streaming_bytes(n):
    """Bytes moved by the 8-read / 1-write streaming kernel over ``n`` outputs."""
    return 9 * 8 * n


def measure_streaming_rate(n, trials=20, warmup=5):
    """Median bytes/s of a kernel reading 8 FP64 values and writing 1 per output."""
    if n < 1:
        raise ValueError("streaming working set must have at least one output")
    src = np.random.default_rng(0).random((n, 8))
    dst = np.empty(n)
    for _ in range(warmup):
        np.add.reduce(src, axis=1, out=dst)
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        np.add.reduce(src, axis=1, out=dst)
        samples.append(time.perf_counter() - t0)
    return streaming_bytes(n) / float(np.median(samples))


def forcing(gids, seed):
    """Pseudo-random right-hand side in (-1, 1), a pure function of global id and seed."""
    return hash_to_uniform(gids, seed)


# -- configuration and report --------------------------------------------------------------

@dataclass
class BenchConfig:
    box: Tuple[int, int, int] = (4, 4, 4)
    degree: int = 7
    ranks: int = 1
    transport: str = "inprocess"
    exchange: str = "auto"
    lam: float = 1.0
    iterations: int = BENCHMARK_ITERATIONS
    seed: int = 0
    json_path: Optional[str] = None
    bandwidth: Optional[float] = None     # bytes/s; measured when None
    peak_flops: float = math.inf
    stream_size: int = 1 << 20
    strategy: str = "auto"
    timeout: float = 300.0

    def validate(self):
        if self.transport not in ("inprocess", "socket"):
            raise ConfigurationError(f"unknown transport {self.transport!r}")
        if self.exchange not in ("auto",) + ALGORITHMS:
            raise ConfigurationError(f"unknown exchange {self.exchange!r}")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if not self.lam > 0:
            raise ConfigurationError("benchmark requires lambda > 0")
        box = self.box_spec()
        factor_ranks(self.ranks, box)
        return box

    def box_spec(self):
        return BoxSpec(*self.box, N=self.degree)


@dataclass
class BenchReport:
    E: int
    N: int
    P: int
    N_G: int
    N_L: int
    exchange: str
    time_s: float
    fom_flops: float
    throughput: float
    bytes_per_iter: int
    roofline_flops: float
    phase_times: Dict[str, float]
    # not serialized
    iterations: int = BENCHMARK_ITERATIONS
    bandwidth: float = math.nan
    peak_flops: float = math.inf
    history: list = field(default_factory=list, repr=False)
    x: Optional[np.ndarray] = field(default=None, repr=False)
    b: Optional[np.ndarray] = field(default=None, repr=False)
    tuning: Dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        return {k: d[k] for k in REPORT_KEYS}

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def recompute(fields, iterations=BENCHMARK_ITERATIONS):
    """Derived report quantities recomputed from serialized fields alone."""
    return {
        "fom_flops": iterations * nekbone_flops(fields["E"], fields["N"]) / fields["time_s"],
        "throughput": throughput(fields["N_G"], iterations, fields["P"], fields["time_s"]),
        "bytes_per_iter": bytes_per_cg_iteration(fields["N_G"], fields["N_L"]),
    }


# -- rank program --------------------------------------------------------------------------

def rank_program(transport, cfg):
    """Everything one rank does in a benchmark run; returns a picklable summary."""
    box = cfg.box_spec()
    t_setup = time.perf_counter()
    prob = build_problem(box, transport, lam=cfg.lam, seed=cfg.seed, strategy=cfg.strategy)
    setup_time = time.perf_counter() - t_setup

    t_tune = time.perf_counter()
    force = None if cfg.exchange == "auto" else cfg.exchange
    choice, medians = tune_exchange(transport, prob.gs.halo_plan, force=force, seed=cfg.seed)
    prob.gs.algorithm = choice
    prob.op.algorithm = choice
    tune_time = time.perf_counter() - t_tune

    b = forcing(prob.owned, cfg.seed)
    comm = Reductions(transport)
    prob.op.reset_timers()
    barrier(transport)
    t0 = time.perf_counter()
    result = cg_run(prob.op.apply, b, comm, mode="fixed", iterations=cfg.iterations)
    barrier(transport)
    elapsed = time.perf_counter() - t0

    phases = dict(prob.op.phase_times)
    phases.update(operator=result.time_operator, vector=result.time_vector,
                  setup=setup_time, tune=tune_time)
    return {
        "rank": 0 if transport is None else transport.rank,
        "owned": prob.owned, "x": result.x, "b": b, "history": result.history,
        "iterations": result.iterations, "reductions": result.reductions,
        "time_s": elapsed, "phase_times": phases, "exchange": choice, "tuning": medians,
    }


def make_report(cfg, box, results, bandwidth):
    r0 = results[0]
    E, N, P = box.E, box.N, cfg.ranks
    time_s = r0["time_s"]
    iters = r0["iterations"]
    report = BenchReport(
        E=E, N=N, P=P, N_G=box.N_G, N_L=box.N_L, exchange=r0["exchange"], time_s=time_s,
        fom_flops=iters * nekbone_flops(E, N) / time_s,
        throughput=throughput(box.N_G, iters, P, time_s),
        bytes_per_iter=bytes_per_cg_iteration(box.N_G, box.N_L),
        roofline_flops=roofline_bound(N, bandwidth, cfg.peak_flops),
        phase_times=r0["phase_times"], iterations=iters, bandwidth=bandwidth,
        peak_flops=cfg.peak_flops, history=r0["history"], tuning=r0["tuning"])
    report.x = assemble_global([(r["owned"], r["x"]) for r in results], box.N_G)
    report.b = assemble_global([(r["owned"], r["b"]) for r in results], box.N_G)
    return report


def run_benchmark(cfg):
    """Run the fixed-iteration CG benchmark on ``cfg.ranks`` ranks and build the report."""
    box = cfg.validate()
    bandwidth = cfg.bandwidth
    if bandwidth is None:
        bandwidth = measure_streaming_rate(cfg.stream_size)
    try:
        if cfg.transport == "inprocess":
            results = run_in_process(cfg.ranks, rank_program, cfg, timeout=cfg.timeout)
        else:
            results = run_socket_ranks(cfg.ranks, rank_program, cfg, timeout=cfg.timeout)
    except HipBoneError as exc:
        raise type(exc)(f"benchmark ({cfg.transport}, P={cfg.ranks}): {exc}") from exc
    report = make_report(cfg, box, results, bandwidth)
    if cfg.json_path:
        report.write(cfg.json_path)
    return report
