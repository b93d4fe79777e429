"""Spectral-element conjugate-gradient mini-app with pluggable halo exchanges.

Typical single-rank use::

    from hipbone import BoxSpec, serial_operator, cg_run
    box = BoxSpec(2, 2, 2, N=7)
    op = serial_operator(box, lam=1.0)
    result = cg_run(op.apply, b, mode="tolerance", tol=1e-20)
"""

from .basis import GeometricFactors, SpectralBasis, derivative_matrix, geometric_factors, gll
from .bench import (BenchConfig, BenchReport, bytes_per_cg_iteration, hipbone_flops,
                    measure_streaming_rate, nekbone_flops, recompute, roofline_bound,
                    run_benchmark, throughput)
from .errors import (BreakdownError, ConfigurationError, HipBoneError, OracleError,
                     ProtocolError, SetupError, StateError, TransportError)
from .exchange import (ExchangePlan, crystal_partners, exchange, exchange_alltoall,
                       exchange_crystal_router, exchange_pairwise, tune_exchange)
from .krylov import cg_run, fused_residual_update, global_dot
from .mesh import BoxSpec, LocalMesh, RankGrid, build_box_mesh, classify_elements, factor_ranks
from .ogs import GatherScatter
from .ogs import setup as setup_gather_scatter
from .operator import OperatorConfig, PoissonOperator, estimate_bytes_moved
from .oracle import assemble_dense, compare, direct_solve
from .problem import build_problem, serial_operator
from .transport import InProcessTransport, SocketTransport, run_in_process, run_socket_ranks

__version__ = "0.1.0"
