"""Gauss-Lobatto-Legendre nodes, weights, derivative matrix and geometric factors."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

# slot order of the six packed metric factors at every node
FACTOR_NAMES = ("rr", "rs", "rt", "ss", "st", "tt")


def legendre(N, x):
    """Return ``(P_N(x), P_{N-1}(x))`` by the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    p_prev, p = np.ones_like(x), x.copy()
    if N == 0:
        return p_prev, np.zeros_like(x)
    for n in range(1, N):
        p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
    return p, p_prev


def gll(N, tol=1e-15, maxiter=100):
    """GLL nodes and weights for degree ``N``.

    Newton iteration on ``x P_N - P_{N-1}``, which is proportional to
    ``(1 - x^2) P'_N``, from Chebyshev-Lobatto starting points.
    """
    if N < 1:
        raise ConfigurationError(f"GLL rule needs N >= 1, got {N}")
    x = -np.cos(np.pi * np.arange(N + 1) / N)
    for _ in range(maxiter):
        pN, pNm1 = legendre(N, x)
        dx = (x * pN - pNm1) / ((N + 1) * pN)
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    # enforce exact symmetry and endpoints
    x = 0.5 * (x - x[::-1])
    x[0], x[-1] = -1.0, 1.0
    if N % 2 == 0:
        x[N // 2] = 0.0
    pN, _ = legendre(N, x)
    w = 2.0 / (N * (N + 1) * pN**2)
    return x, w


def lobatto_residual(N, x):
    """``(1 - x^2) P'_N(x)`` evaluated through ``N (P_{N-1} - x P_N)``."""
    pN, pNm1 = legendre(N, x)
    return N * (pNm1 - np.asarray(x) * pN)


def derivative_matrix(nodes):
    """Lagrange differentiation matrix ``D[i, j] = l_j'(x_i)`` on ``nodes``.

    Off-diagonal entries come from barycentric weights; the diagonal is the
    negative row sum so that constants are annihilated to rounding.
    """
    x = np.asarray(nodes, dtype=np.float64)
    n = len(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    c = 1.0 / np.prod(diff, axis=1)
    D = (c[None, :] / c[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    D[np.arange(n), np.arange(n)] = -D.sum(axis=1)
    return D


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    N: int
    nodes: np.ndarray
    weights: np.ndarray
    D: np.ndarray

    @classmethod
    def build(cls, N):
        nodes, weights = gll(N)
        D = derivative_matrix(nodes)
        for arr in (nodes, weights, D):
            arr.setflags(write=False)
        return cls(N=N, nodes=nodes, weights=weights, D=D)


@dataclass(frozen=True, eq=False)
class GeometricFactors:
    """Packed metric factors, shape ``(E, N+1, N+1, N+1, 6)``.

    The trailing axis holds ``(G_rr, G_rs, G_rt, G_ss, G_st, G_tt)`` so the
    six values of one node are contiguous in memory.
    """

    packed: np.ndarray

    def factor(self, name):
        return self.packed[..., FACTOR_NAMES.index(name)]


def geometric_factors(local, basis):
    """Quadrature-weighted metric factors for the axis-aligned elements of ``local``."""
    hx, hy, hz = local.box.element_size
    if min(hx, hy, hz) <= 0.0:
        raise ConfigurationError(f"degenerate element extents {(hx, hy, hz)}")
    w = basis.weights
    wq = w[:, None, None] * w[None, :, None] * w[None, None, :]   # [k, j, i]
    J = hx * hy * hz / 8.0
    n1 = basis.N + 1
    packed = np.zeros((local.n_elements, n1, n1, n1, 6))
    packed[..., 0] = wq * J * (2.0 / hx) ** 2
    packed[..., 3] = wq * J * (2.0 / hy) ** 2
    packed[..., 5] = wq * J * (2.0 / hz) ** 2
    packed.setflags(write=False)
    return GeometricFactors(packed)
