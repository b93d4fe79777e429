"""Matrix-free screened Poisson operator ``A = Z^T (S_L + lambda W) Z``.

The element operator ``S_L^e = D^T G^e D`` is applied by sum factorization:
the 1D derivative matrix is contracted along each tensor direction, the
result is multiplied by the six packed geometric factors, and the transposed
contractions are applied. Every contraction is written as an explicit loop
over the summed index with elementwise multiply-adds, which fixes the
floating-point evaluation order per node. Results therefore do not depend on
how elements are batched, on the contraction strategy, or on the rank count.
"""

import time
from dataclasses import dataclass

import numpy as np

from .basis import geometric_factors
from .errors import ConfigurationError, StateError, TransportError
from .exchange import start_exchange

STRATEGIES = ("monolithic", "sliced")

PHASES = ("halo_pack", "interior_a", "halo_wait", "halo_elements", "gather_pack",
          "interior_b", "local_gather", "gather_wait")


@dataclass(frozen=True)
class OperatorConfig:
    """``lam`` is the screening coefficient; ``strategy`` may be ``"auto"``."""

    lam: float = 1.0
    strategy: str = "auto"
    crossover: int = 9

    def __post_init__(self):
        if not self.lam >= 0.0:
            raise ConfigurationError(f"screening coefficient must be non-negative, got {self.lam}")
        if self.strategy not in STRATEGIES + ("auto",):
            raise ConfigurationError(f"unknown contraction strategy {self.strategy!r}")

    def resolve(self, N):
        if self.strategy != "auto":
            return self.strategy
        return "sliced" if N >= self.crossover else "monolithic"


def estimate_bytes_moved(N_G, N_L):
    """Main-memory traffic of one operator application under perfect caching."""
    return 8 * N_G + 68 * N_L


# -- 1D contractions along each tensor direction of (E, k, j, i) blocks ------------------

def _contract_i(M, x):
    """out[..., a] = sum_m M[a, m] x[..., m]"""
    out = M[:, 0] * x[..., 0:1]
    for m in range(1, M.shape[1]):
        out += M[:, m] * x[..., m:m + 1]
    return out


def _contract_j(M, x):
    """out[..., a, :] = sum_m M[a, m] x[..., m, :]"""
    out = M[:, 0, None] * x[..., 0:1, :]
    for m in range(1, M.shape[1]):
        out += M[:, m, None] * x[..., m:m + 1, :]
    return out


def _contract_k(M, x):
    """out[:, a] = sum_m M[a, m] x[:, m]"""
    out = M[:, 0, None, None] * x[:, 0:1]
    for m in range(1, M.shape[1]):
        out += M[:, m, None, None] * x[:, m:m + 1]
    return out


def _metric(G, ur, us, ut):
    g = [G[..., c] for c in range(6)]
    wr = g[0] * ur + g[1] * us + g[2] * ut
    ws = g[1] * ur + g[3] * us + g[4] * ut
    wt = g[2] * ur + g[4] * us + g[5] * ut
    return wr, ws, wt


def local_poisson_monolithic(D, G, lamW, x):
    """Apply ``D^T G D + lambda W`` to a batch of elements ``x`` of shape (E, n, n, n)."""
    DT = D.T
    ur, us, ut = _contract_i(D, x), _contract_j(D, x), _contract_k(D, x)
    wr, ws, wt = _metric(G, ur, us, ut)
    y = _contract_i(DT, wr)
    y += _contract_j(DT, ws)
    y += _contract_k(DT, wt)
    y += lamW * x
    return y


def local_poisson_sliced(D, G, lamW, x):
    """Same arithmetic as the monolithic path, one k-layer of every element at a time."""
    n = D.shape[0]
    DT = D.T
    wr = np.empty_like(x)
    ws = np.empty_like(x)
    wt = np.empty_like(x)
    for k in range(n):
        xk = x[:, k]
        ut = D[k, 0] * x[:, 0]
        for m in range(1, n):
            ut += D[k, m] * x[:, m]
        wr[:, k], ws[:, k], wt[:, k] = _metric(G[:, k], _contract_i(D, xk), _contract_j(D, xk), ut)
    y = np.empty_like(x)
    for k in range(n):
        yk = _contract_i(DT, wr[:, k])
        yk += _contract_j(DT, ws[:, k])
        yt = DT[k, 0] * wt[:, 0]
        for m in range(1, n):
            yt += DT[k, m] * wt[:, m]
        yk += yt
        yk += lamW[:, k] * x[:, k]
        y[:, k] = yk
    return y


_KERNELS = {"monolithic": local_poisson_monolithic, "sliced": local_poisson_sliced}


class PoissonOperator:
    """Screened Poisson operator on one rank, with the three-kernel overlap split.

    ``gs`` must have its degree counts computed. ``transport`` may be ``None``
    for a single rank.
    """

    def __init__(self, local, basis, gs, transport=None, config=None, algorithm=None):
        self.local = local
        self.basis = basis
        self.gs = gs
        self.transport = transport
        self.config = config or OperatorConfig()
        self.algorithm = algorithm or gs.algorithm
        self.strategy = self.config.resolve(basis.N)
        self._kernel = _KERNELS[self.strategy]
        n1 = basis.N + 1
        self.shape = (local.n_elements, n1, n1, n1)
        self.D = np.ascontiguousarray(basis.D)
        self.G = geometric_factors(local, basis).packed
        self.W = gs.degree_weights().reshape(self.shape)
        self.lamW = self.config.lam * self.W
        self.map = gs.scatter_map.reshape(self.shape)
        # workspace reused by every apply
        self.x_ext = np.empty(gs.n_owned + len(gs.ghosts))
        self.yL = np.empty(self.shape)
        self.phase_times = dict.fromkeys(PHASES, 0.0)
        self.applications = 0

    @property
    def N_L(self):
        return self.gs.n_local

    def reset_timers(self):
        self.phase_times = dict.fromkeys(PHASES, 0.0)
        self.applications = 0

    def apply_local(self, elements, x_ext, yL):
        """yL[e] = (S_L^e + lambda W) x_e for each listed local element; others untouched."""
        elements = np.asarray(elements, dtype=np.int64)
        if len(elements) == 0:
            return yL
        idx = self.map[elements]
        if idx.max() >= len(x_ext):
            raise StateError("apply_local references DOFs that are not present; "
                             "halo values have not been delivered")
        x = x_ext[idx]
        yL[elements] = self._kernel(self.D, self.G[elements], self.lamW[elements], x)
        return yL

    def _timed(self, phase, t0):
        t1 = time.perf_counter()
        self.phase_times[phase] += t1 - t0
        return t1

    def _wait(self, pending, phase):
        try:
            return pending.wait()
        except TransportError as exc:
            raise TransportError(f"operator phase {phase!r}: {exc}") from exc

    def apply(self, xG, out=None):
        """A xG for the owned DOFs of this rank (collective over all ranks)."""
        gs, local = self.gs, self.local
        n_owned = gs.n_owned
        if len(xG) != n_owned:
            raise ValueError(f"expected {n_owned} owned DOFs, got {len(xG)}")
        out = np.empty(n_owned) if out is None else out
        x_ext, yL = self.x_ext, self.yL
        t = time.perf_counter()

        # (1) pack and post the halo exchange
        x_ext[:n_owned] = xG
        x_ext[n_owned:] = np.nan
        halo = start_exchange(self.transport, gs.halo_plan, gs.pack_halo(xG), self.algorithm)
        t = self._timed("halo_pack", t)
        # (2) first half of the interior while halo values are in flight
        self.apply_local(local.interior_a, x_ext, yL)
        t = self._timed("interior_a", t)
        # (3) complete the halo exchange
        x_ext[n_owned:] = gs.unpack_halo(self._wait(halo, "halo exchange"))
        t = self._timed("halo_wait", t)
        # (4) halo elements
        self.apply_local(local.halo, x_ext, yL)
        t = self._timed("halo_elements", t)
        # (5) pack and post the gather exchange
        flat = yL.reshape(-1)
        gather = start_exchange(self.transport, gs.gather_plan, gs.pack_gather(flat),
                                self.algorithm)
        t = self._timed("gather_pack", t)
        # (6) second half of the interior, then the process-local gather
        self.apply_local(local.interior_b, x_ext, yL)
        t = self._timed("interior_b", t)
        gs.gather_interior(flat, out)
        t = self._timed("local_gather", t)
        # (7) remote contributions for the shared rows
        gs.gather_halo(flat, self._wait(gather, "gather exchange"), out)
        self._timed("gather_wait", t)
        self.applications += 1
        return out

    __call__ = apply

    def apply_unsplit(self, xG):
        """Reference composition scatter -> local operator on all elements -> gather."""
        gs = self.gs
        ghosts = gs.exchange_halo(self.transport, xG, self.algorithm)
        x_ext = gs.extend(xG, ghosts)
        yL = np.empty(self.shape)
        self.apply_local(np.arange(self.local.n_elements), x_ext, yL)
        return gs.gather_global(self.transport, yL.reshape(-1), self.algorithm)
