"""Dense reference assembly of ``A = Z^T (S_L + lambda W) Z`` for small boxes.

Element matrices are formed explicitly from Kronecker products, and the
global numbering and scatter matrix are rebuilt here from the box
dimensions. Nothing is shared with the matrix-free path except the 1D GLL
basis.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import OracleError

MAX_DENSE_DOFS = 20_000


@dataclass(frozen=True, eq=False)
class DenseOperator:
    matrix: np.ndarray

    @property
    def dim(self):
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x


def element_matrix(basis, h):
    """Explicit ``(N+1)^3 x (N+1)^3`` stiffness matrix of an axis-aligned box element."""
    n = basis.N + 1
    I = np.eye(n)
    D = np.asarray(basis.D)
    w = np.asarray(basis.weights)
    hx, hy, hz = h
    J = hx * hy * hz / 8.0
    # flat node index i + n*(j + n*k) <-> kron(k-factor, j-factor, i-factor)
    Dr = np.kron(I, np.kron(I, D))
    Ds = np.kron(I, np.kron(D, I))
    Dt = np.kron(D, np.kron(I, I))
    Wq = np.diag(np.kron(w, np.kron(w, w)))
    return J * ((2.0 / hx) ** 2 * Dr.T @ Wq @ Dr
                + (2.0 / hy) ** 2 * Ds.T @ Wq @ Ds
                + (2.0 / hz) ** 2 * Dt.T @ Wq @ Dt)


def element_rows(box):
    """Global node number of every local slot, one row per element (lexicographic)."""
    N, n = box.N, box.N + 1
    gx, gy, _ = (d * N + 1 for d in box.dims)
    rows = []
    for ez in range(box.nz):
        for ey in range(box.ny):
            for ex in range(box.nx):
                slots = []
                for k in range(n):
                    for j in range(n):
                        for i in range(n):
                            slots.append((ex * N + i) + gx * ((ey * N + j) + gy * (ez * N + k)))
                rows.append(slots)
    return np.array(rows, dtype=np.int64)


def scatter_matrix(box):
    """Boolean ``N_L x N_G`` matrix Z for the lexicographically numbered box."""
    rows = element_rows(box).ravel()
    Z = np.zeros((len(rows), box.N_G))
    Z[np.arange(len(rows)), rows] = 1.0
    return Z


def assemble_dense(box, basis, lam):
    """Dense assembled operator for ``box`` (refuses more than 20,000 DOFs)."""
    if box.N_G > MAX_DENSE_DOFS:
        raise OracleError(f"dense assembly refused: N_G={box.N_G} exceeds {MAX_DENSE_DOFS}")
    rows = element_rows(box)
    Se = element_matrix(basis, box.element_size)
    counts = np.bincount(rows.ravel(), minlength=box.N_G).astype(np.float64)
    A = np.zeros((box.N_G, box.N_G))
    # A = sum_e Z_e^T (S^e + lambda W_e) Z_e
    for idx in rows:
        A[np.ix_(idx, idx)] += Se
        A[idx, idx] += lam / counts[idx]
    return DenseOperator(0.5 * (A + A.T))


def direct_solve(A, b):
    """Cholesky solve; raises :class:`OracleError` if ``A`` is not SPD."""
    M = A.matrix if isinstance(A, DenseOperator) else np.asarray(A)
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        return np.zeros_like(b)
    try:
        factor = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"operator is not SPD: {exc}") from exc
    x = scipy.linalg.cho_solve(factor, b)
    resid = np.max(np.abs(M @ x - b))
    if resid > 1e-10 * np.max(np.abs(b)):
        raise OracleError(f"direct solve residual {resid:.3e} too large")
    return x


def compare(apply, A, trials=20, seed=0, project_constants=False):
    """Max over random vectors of ``||apply(x) - A x||_inf / ||A x||_inf``.

    With ``project_constants`` (for lambda = 0) the constant component of
    each trial vector is removed so it stays off the null space.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < trials:
        x = rng.standard_normal(A.dim)
        if project_constants:
            x -= x.mean()
        ref = A @ x
        scale = np.max(np.abs(ref))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.max(np.abs(apply(x) - ref)) / scale))
        done += 1
    return worst
