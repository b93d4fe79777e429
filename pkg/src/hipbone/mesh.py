"""Structured box meshes of hexahedral elements, partitioned across ranks.

Global node ids are lexicographic over the ``(nx*N+1, ny*N+1, nz*N+1)``
grid of distinct points (x fastest), so nodes on shared faces, edges and
corners get the same id on every element that touches them. Element ids are
lexicographic over ``(nx, ny, nz)``.

Within an element, node ``(i, j, k)`` (r, s, t directions) is stored at
flat position ``i + (N+1)*(j + (N+1)*k)``; arrays of element data use the
shape ``(E, N+1, N+1, N+1)`` indexed ``[e, k, j, i]``.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import Dict, Tuple

import numpy as np

from .errors import ConfigurationError

MAX_DEGREE = 15


@dataclass(frozen=True)
class BoxSpec:
    """Global element counts, polynomial degree and physical extent of the box."""

    nx: int
    ny: int
    nz: int
    N: int
    extent: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if not 1 <= self.N <= MAX_DEGREE:
            raise ConfigurationError(f"degree N must satisfy 1 <= N <= {MAX_DEGREE}, got {self.N}")
        if any(float(L) <= 0.0 for L in self.extent):
            raise ConfigurationError("domain extent must be positive on every axis")

    @property
    def dims(self):
        return (self.nx, self.ny, self.nz)

    @property
    def E(self):
        return self.nx * self.ny * self.nz

    @property
    def points(self):
        """Distinct grid points per axis."""
        return tuple(n * self.N + 1 for n in self.dims)

    @property
    def N_G(self):
        px, py, pz = self.points
        return px * py * pz

    @property
    def N_L(self):
        return self.E * (self.N + 1) ** 3

    @property
    def element_size(self):
        return tuple(float(L) / n for L, n in zip(self.extent, self.dims))


@dataclass(frozen=True)
class RankGrid:
    px: int
    py: int
    pz: int

    @property
    def P(self):
        return self.px * self.py * self.pz

    @property
    def dims(self):
        return (self.px, self.py, self.pz)

    def coords(self, rank):
        rx = rank % self.px
        ry = (rank // self.px) % self.py
        rz = rank // (self.px * self.py)
        return rx, ry, rz

    def rank_of(self, rx, ry, rz):
        return rx + self.px * (ry + self.py * rz)


def _cut_surface(grid, dims):
    (px, py, pz), (nx, ny, nz) = grid, dims
    return (px - 1) * ny * nz + (py - 1) * nx * nz + (pz - 1) * nx * ny


def factor_ranks(P, box):
    """Factor ``P`` into a rank grid minimizing the total area of the cut planes.

    Only grids with at most one rank per element layer on each axis are
    admissible. Ties prefer ``px >= py >= pz``.
    """
    if int(P) < 1:
        raise ConfigurationError(f"rank count must be positive, got {P}")
    candidates = []
    for px in range(1, P + 1):
        if P % px:
            continue
        for py in range(1, P // px + 1):
            if (P // px) % py:
                continue
            pz = P // (px * py)
            if px <= box.nx and py <= box.ny and pz <= box.nz:
                candidates.append((px, py, pz))
    if not candidates:
        raise ConfigurationError(
            f"no factorization of P={P} satisfies px <= nx, py <= ny, pz <= nz "
            f"for box {box.nx}x{box.ny}x{box.nz}")
    best = min(candidates, key=lambda g: (_cut_surface(g, box.dims),
                                          not (g[0] >= g[1] >= g[2]),
                                          tuple(-v for v in g)))
    return RankGrid(*best)


def axis_ranges(n, p):
    """Start offsets of ``p`` near-even blocks of ``n`` layers; low blocks get the remainder."""
    base, extra = divmod(n, p)
    sizes = [base + (1 if c < extra else 0) for c in range(p)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class LocalMesh:
    """One rank's share of the box mesh.

    ``shared`` maps each halo node (a global id touched by elements of more
    than one rank) to the ascending tuple of ``(global element id, rank)``
    pairs of every element containing it, on all ranks.
    """

    box: BoxSpec
    grid: RankGrid
    rank: int
    elements: np.ndarray            # (E_loc,) ascending global element ids
    element_coords: np.ndarray      # (E_loc, 3) element lattice coordinates
    node_ids: np.ndarray            # (E_loc, N+1, N+1, N+1) global node ids
    shared: Dict[int, Tuple[Tuple[int, int], ...]]
    neighbors: Tuple[int, ...]
    interior_a: np.ndarray = field(default=None)
    interior_b: np.ndarray = field(default=None)
    halo: np.ndarray = field(default=None)

    @property
    def N(self):
        return self.box.N

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_local(self):
        """N_L for this rank."""
        return self.node_ids.size

    @property
    def halo_nodes(self):
        return np.fromiter(sorted(self.shared), dtype=np.int64, count=len(self.shared))


def _axis_sharing(point, n, N, starts):
    """Elements along one axis that contain grid point ``point`` and their rank coordinates."""
    e = point // N
    elems = [e - 1, e] if point % N == 0 else [e]
    elems = [x for x in elems if 0 <= x < n]
    return [(x, int(np.searchsorted(starts, x, side="right") - 1)) for x in elems]


def build_box_mesh(box, grid, rank):
    """Generate the element list, local-to-global node map and halo data for ``rank``."""
    if not 0 <= rank < grid.P:
        raise ConfigurationError(f"rank {rank} out of range for P={grid.P}")
    if grid.px > box.nx or grid.py > box.ny or grid.pz > box.nz:
        raise ConfigurationError("rank grid has more ranks than element layers on some axis")
    N = box.N
    n1 = N + 1
    starts = [axis_ranges(n, p) for n, p in zip(box.dims, grid.dims)]
    rc = grid.coords(rank)
    lo = [int(starts[a][rc[a]]) for a in range(3)]
    hi = [int(starts[a][rc[a] + 1]) for a in range(3)]

    ez, ey, ex = np.meshgrid(np.arange(lo[2], hi[2]), np.arange(lo[1], hi[1]),
                             np.arange(lo[0], hi[0]), indexing="ij")
    coords = np.stack([ex.ravel(), ey.ravel(), ez.ravel()], axis=1).astype(np.int64)
    elements = coords[:, 0] + box.nx * (coords[:, 1] + box.ny * coords[:, 2])
    order = np.argsort(elements, kind="stable")
    elements, coords = elements[order], coords[order]

    gx, gy, _ = box.points
    a = np.arange(n1)
    pi = coords[:, 0, None, None, None] * N + a[None, None, None, :]
    pj = coords[:, 1, None, None, None] * N + a[None, None, :, None]
    pk = coords[:, 2, None, None, None] * N + a[None, :, None, None]
    node_ids = (pi + gx * (pj + gy * pk)).astype(np.int64)

    # halo nodes can only sit on internal cut planes of this rank's sub-box
    shared = {}
    if grid.P > 1:
        cut = []
        for ax in range(3):
            planes = set()
            if rc[ax] > 0:
                planes.add(lo[ax] * N)
            if rc[ax] < grid.dims[ax] - 1:
                planes.add(hi[ax] * N)
            cut.append(planes)
        ranges = [range(lo[ax] * N, hi[ax] * N + 1) for ax in range(3)]
        candidates = set()
        for ax in range(3):
            for plane in cut[ax]:
                rs = list(ranges)
                rs[ax] = [plane]
                candidates.update(product(*rs))
        for p in sorted(candidates):
            per_axis = [_axis_sharing(p[ax], box.dims[ax], N, starts[ax]) for ax in range(3)]
            members = []
            ranks = set()
            for (ex_, rx), (ey_, ry), (ez_, rz) in product(*per_axis):
                r = grid.rank_of(rx, ry, rz)
                members.append((int(ex_ + box.nx * (ey_ + box.ny * ez_)), r))
                ranks.add(r)
            if len(ranks) > 1:
                gid = int(p[0] + gx * (p[1] + gy * p[2]))
                shared[gid] = tuple(sorted(members))

    neighbors = sorted({r for members in shared.values() for _, r in members} - {rank})
    for arr in (elements, coords, node_ids):
        arr.setflags(write=False)
    local = LocalMesh(box=box, grid=grid, rank=rank, elements=elements,
                      element_coords=coords, node_ids=node_ids, shared=shared,
                      neighbors=tuple(neighbors))
    interior_a, interior_b, halo = classify_elements(local)
    object.__setattr__(local, "interior_a", interior_a)
    object.__setattr__(local, "interior_b", interior_b)
    object.__setattr__(local, "halo", halo)
    return local


def classify_elements(local):
    """Split owned elements into (interiorA, interiorB, halo) local index arrays.

    Halo elements contain at least one halo node. The remaining interior
    elements are halved by ascending local index with ``|A| = ceil(n/2)``.
    """
    E_loc = local.n_elements
    if local.shared:
        flat = local.node_ids.reshape(E_loc, -1)
        is_halo = np.isin(flat, local.halo_nodes).any(axis=1)
    else:
        is_halo = np.zeros(E_loc, dtype=bool)
    halo = np.flatnonzero(is_halo)
    interior = np.flatnonzero(~is_halo)
    half = (len(interior) + 1) // 2
    return interior[:half], interior[half:], halo
