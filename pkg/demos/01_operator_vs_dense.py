"""
Matrix-free operator against a dense assembly
=============================================

Build the screened Poisson operator on a small box of hexahedra and compare
its action with an explicitly assembled matrix.
"""

import numpy as np

from hipbone import BoxSpec, SpectralBasis, assemble_dense, serial_operator

# a 2 x 2 x 1 box of degree-3 elements
box = BoxSpec(2, 2, 1, N=3)
print("elements", box.E, "assembled DOFs", box.N_G, "local DOFs", box.N_L)

# the matrix-free operator works on vectors in global id order
op = serial_operator(box, lam=1.0)

# the dense reference forms every element matrix with Kronecker products
A = assemble_dense(box, SpectralBasis.build(3), lam=1.0)

x = np.random.default_rng(0).standard_normal(box.N_G)
err = np.max(np.abs(op.apply(x) - A @ x)) / np.max(np.abs(A @ x))
print("relative difference", err)

# constants are eigenvectors with eigenvalue lambda
print("A 1 - 1:", np.max(np.abs(op.apply(np.ones(box.N_G)) - 1.0)))

# with lambda = 0 the smallest eigenvalue is zero, and only constants reach it
A0 = assemble_dense(box, SpectralBasis.build(3), lam=0.0)
eig = np.linalg.eigvalsh(A0.matrix)
print("smallest eigenvalues with lambda = 0:", eig[:3])
