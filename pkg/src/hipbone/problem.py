"""Per-rank construction of the full pipeline: mesh, basis, gather-scatter, operator."""

from dataclasses import dataclass

import numpy as np

from .basis import SpectralBasis
from .mesh import build_box_mesh, factor_ranks
from .ogs import setup
from .operator import OperatorConfig, PoissonOperator


@dataclass(eq=False)
class RankProblem:
    transport: object
    local: object
    basis: object
    gs: object
    op: PoissonOperator

    @property
    def owned(self):
        return self.gs.owned


def build_problem(box, transport=None, lam=1.0, seed=0, algorithm="pairwise",
                  strategy="auto", grid=None, validate=True):
    """Set up one rank's share of the screened Poisson problem (collective if P > 1)."""
    P = 1 if transport is None else transport.size
    rank = 0 if transport is None else transport.rank
    grid = grid or factor_ranks(P, box)
    local = build_box_mesh(box, grid, rank)
    basis = SpectralBasis.build(box.N)
    gs = setup(local, seed)
    gs.algorithm = algorithm
    if P > 1:
        if validate:
            gs.validate(transport)
        gs.compute_counts(transport)
    op = PoissonOperator(local, basis, gs, transport,
                         OperatorConfig(lam=lam, strategy=strategy))
    return RankProblem(transport, local, basis, gs, op)


def serial_operator(box, lam=1.0, strategy="auto"):
    """Single-rank operator acting on vectors in global id order."""
    return build_problem(box, None, lam=lam, strategy=strategy).op


def assemble_global(pieces, N_G):
    """Combine per-rank ``(owned ids, values)`` pairs into one global-order vector."""
    out = np.full(N_G, np.nan)
    for ids, vals in pieces:
        out[ids] = vals
    return out
