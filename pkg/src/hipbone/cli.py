"""Command-line driver: ``python -m hipbone`` (or the ``hipbone`` script)."""

import argparse
import itertools
import json
import logging
import math
import os
import sys

import numpy as np

from .bench import BenchConfig, make_report, measure_streaming_rate, rank_program, run_benchmark
from .errors import HipBoneError
from .exchange import ALGORITHMS
from .transport import parse_peers, run_socket_rank

logger = logging.getLogger("hipbone")


def _triple(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected NX,NY,NZ")
    return tuple(parts)


def build_parser():
    p = argparse.ArgumentParser(prog="hipbone",
                                description="Spectral-element CG mini-app benchmark.")
    p.add_argument("--box", type=_triple, default=(4, 4, 4), metavar="NX,NY,NZ")
    p.add_argument("--degree", type=int, default=7, metavar="N")
    p.add_argument("--ranks", type=int, default=1, metavar="P")
    p.add_argument("--transport", choices=("inprocess", "socket"), default="inprocess")
    p.add_argument("--exchange", choices=("auto",) + ALGORITHMS, default="auto")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, metavar="X")
    p.add_argument("--iterations", type=int, default=100, metavar="K")
    p.add_argument("--seed", type=int, default=0, metavar="S")
    p.add_argument("--json", dest="json_path", metavar="PATH")
    p.add_argument("--bandwidth", type=float, metavar="BYTES_PER_S",
                   help="streaming bandwidth for the roofline (measured if omitted)")
    p.add_argument("--peak-flops", type=float, default=math.inf)
    p.add_argument("--verify", action="store_true",
                   help="run the dense-oracle checks on small configurations and exit")
    p.add_argument("--peers", help="host:port list; run this process as one socket rank")
    p.add_argument("--rank", type=int, help="rank of this process when --peers is given")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_verify(out=sys.stdout, degrees=(1, 2, 3, 4)):
    """Operator and CG checks against the dense oracle; returns True if all pass."""
    from .basis import SpectralBasis
    from .krylov import cg_run
    from .mesh import BoxSpec
    from .oracle import assemble_dense, compare, direct_solve
    from .problem import serial_operator

    ok = True
    for dims in itertools.product((1, 2), repeat=3):
        for N in degrees:
            for lam in (0.0, 1.0):
                box = BoxSpec(*dims, N=N)
                A = assemble_dense(box, SpectralBasis.build(N), lam)
                err = compare(serial_operator(box, lam).apply, A, trials=20,
                              project_constants=lam == 0.0)
                passed = err <= 1e-12
                ok &= passed
                print(f"{'PASS' if passed else 'FAIL'} operator box={dims} N={N} "
                      f"lambda={lam:g} max rel err={err:.2e}", file=out)
    box = BoxSpec(2, 2, 2, N=3)
    op = serial_operator(box, 1.0)
    A = assemble_dense(box, SpectralBasis.build(3), 1.0)
    b = np.random.default_rng(0).uniform(-1, 1, box.N_G)
    x = cg_run(op.apply, b, mode="tolerance", tol=1e-20 * float(b @ b)).x
    ref = direct_solve(A, b)
    err = np.max(np.abs(x - ref)) / np.max(np.abs(ref))
    passed = err <= 1e-8
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} cg vs direct solve box=(2,2,2) N=3 "
          f"rel err={err:.2e}", file=out)
    return ok


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verify:
        return 0 if run_verify() else 1

    peers = args.peers or os.environ.get("HIPBONE_PEERS")
    cfg = BenchConfig(box=args.box, degree=args.degree, ranks=args.ranks,
                      transport=args.transport, exchange=args.exchange, lam=args.lam,
                      iterations=args.iterations, seed=args.seed, json_path=args.json_path,
                      bandwidth=args.bandwidth, peak_flops=args.peak_flops)
    try:
        if peers:
            return _run_as_socket_rank(cfg, peers, args.rank)
        report = run_benchmark(cfg)
    except HipBoneError as exc:
        print(f"hipbone: error: {exc}", file=sys.stderr)
        return 2
    print(report.to_json())
    return 0


def _run_as_socket_rank(cfg, peers, rank):
    """One rank of a manually launched socket run (e.g. across hosts)."""
    peer_list = parse_peers(peers)
    if rank is None:
        rank = int(os.environ.get("HIPBONE_RANK", "-1"))
    if not 0 <= rank < len(peer_list):
        print("hipbone: error: --rank (or HIPBONE_RANK) must index the peer list",
              file=sys.stderr)
        return 2
    cfg.ranks = len(peer_list)
    cfg.transport = "socket"
    box = cfg.validate()
    bandwidth = cfg.bandwidth
    if rank == 0 and bandwidth is None:
        bandwidth = measure_streaming_rate(cfg.stream_size)
    result = run_socket_rank(rank, peer_list, _rank_with_results, cfg, timeout=cfg.timeout)
    if rank == 0:
        report = make_report(cfg, box, result, bandwidth)
        if cfg.json_path:
            report.write(cfg.json_path)
        print(report.to_json())
    return 0


def _rank_with_results(transport, cfg):
    """Run the rank program and collect every rank's summary on rank 0."""
    import pickle

    mine = rank_program(transport, cfg)
    if transport.rank != 0:
        transport.send(0, 250, pickle.dumps(mine))
        return None
    return [mine] + [pickle.loads(transport.recv(r, 250)) for r in range(1, transport.size)]


if __name__ == "__main__":
    sys.exit(main())
