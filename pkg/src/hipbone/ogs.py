"""Gather (Z^T), scatter (Z) and degree weights for assembled DOF storage.

Each rank stores the assembled DOFs it owns, in ascending global id. A halo
node is owned by one of its sharing ranks, picked by a seeded hash so every
rank agrees without communication. Non-owned global ids referenced by local
elements ("ghosts") are filled by the halo exchange before scattering.

Gather sums are accumulated in a partition-independent order: ascending
global element id of the contributing slot. Together with the fact that
each element contributes at most one slot per node, this makes gathered
values bitwise identical for every rank count.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import SetupError, StateError
from .exchange import ExchangePlan, exchange, start_exchange
from .hashing import OWNER_SALT, hash_ids

TAG_VALIDATE = 30


def choose_owners(gids, sharers, seed):
    """Owner of each shared node: ``sorted(sharers)[hash(g, seed) % len(sharers)]``."""
    gids = np.asarray(gids, dtype=np.int64)
    if len(gids) == 0:
        return np.zeros(0, dtype=np.int64)
    h = hash_ids(gids, seed, OWNER_SALT)
    owners = np.empty(len(gids), dtype=np.int64)
    for n, (hv, ranks) in enumerate(zip(h, sharers)):
        ranks = sorted(ranks)
        owners[n] = ranks[int(hv % np.uint64(len(ranks)))]
    return owners


class RowSums:
    """Row-wise sums of ``values[cols]`` grouped by row length.

    Each row is summed left to right in its CSR order, so the result does not
    depend on how rows are batched.
    """

    def __init__(self, rows, indptr, cols):
        self.groups = []
        lengths = np.diff(indptr)
        for length in np.unique(lengths):
            sel = np.flatnonzero(lengths == length)
            idx = cols[indptr[sel][:, None] + np.arange(length)[None, :]]
            self.groups.append((np.asarray(rows)[sel], idx))

    def __call__(self, values, out):
        for rows, idx in self.groups:
            acc = values[idx[:, 0]]
            for c in range(1, idx.shape[1]):
                acc += values[idx[:, c]]
            out[rows] = acc
        return out


@dataclass(eq=False)
class GatherScatter:
    """Per-rank gather-scatter operator and its communication plans.

    Attributes of interest:

    ``owned``          ascending global ids owned by this rank (the xG layout)
    ``ghosts``         ascending global ids referenced here but owned elsewhere
    ``scatter_map``    per local slot, index into ``concat(xG, ghost values)``
    ``gather_indptr``/``gather_slots``
                       CSR of Z^T over owned rows (local slots only)
    ``halo_plan``      owner -> sharer exchange of xG values
    ``gather_plan``    sharer -> owner exchange of per-slot contributions
    """

    rank: int
    n_local: int
    owned: np.ndarray
    ghosts: np.ndarray
    scatter_map: np.ndarray
    gather_indptr: np.ndarray
    gather_slots: np.ndarray
    halo_send: Dict[int, np.ndarray]      # peer -> indices into owned
    halo_recv: Dict[int, np.ndarray]      # peer -> indices into ghosts
    halo_send_gids: Dict[int, np.ndarray]
    halo_recv_gids: Dict[int, np.ndarray]
    gather_send: Dict[int, np.ndarray]    # peer -> local slots, in the owner's merge order
    gather_recv: Dict[int, int]           # peer -> number of contributions expected
    interior_rows: np.ndarray             # owned rows with purely local contributions
    halo_rows: np.ndarray                 # owned rows that also receive remote contributions
    interior_sums: RowSums                # rows summed from yL alone
    halo_sums: RowSums                    # rows summed from concat(yL, recv...)
    owner_of_shared: Dict[int, int]
    counts: np.ndarray = None             # per-slot global degree, set by compute_counts
    algorithm: str = "pairwise"

    @property
    def n_owned(self):
        return len(self.owned)

    @property
    def halo_plan(self):
        return ExchangePlan({p: len(v) for p, v in self.halo_send.items()},
                            {p: len(v) for p, v in self.halo_recv.items()}, self.algorithm)

    @property
    def gather_plan(self):
        return ExchangePlan({p: len(v) for p, v in self.gather_send.items()},
                            dict(self.gather_recv), self.algorithm)

    # -- halo exchange pieces ------------------------------------------------------------

    def pack_halo(self, xG):
        return {p: xG[idx] for p, idx in self.halo_send.items()}

    def unpack_halo(self, received, out=None):
        ghosts = np.empty(len(self.ghosts)) if out is None else out
        if len(self.ghosts):
            filled = np.zeros(len(self.ghosts), dtype=bool)
            for p, idx in self.halo_recv.items():
                if p not in received:
                    raise StateError(f"halo values from rank {p} were not delivered")
                ghosts[idx] = received[p]
                filled[idx] = True
            if not filled.all():
                raise StateError("halo exchange left ghost values unset")
        return ghosts

    def extend(self, xG, ghosts=None):
        """``concat(xG, ghosts)``; the readable DOF vector the scatter map indexes."""
        if len(self.ghosts) and ghosts is None:
            raise StateError("scatter needs halo values for non-owned DOFs; run the halo "
                             "exchange first")
        if not len(self.ghosts):
            return np.asarray(xG, dtype=np.float64)
        return np.concatenate([xG, ghosts])

    # -- Z, Z^T, ZZ^T ---------------------------------------------------------------------

    def scatter(self, xG, ghosts=None):
        """xL[s] = x[map[s]] for every local slot."""
        return self.extend(xG, ghosts)[self.scatter_map]

    def pack_gather(self, yL):
        return {p: yL[slots] for p, slots in self.gather_send.items()}

    def gather_interior(self, yL, out):
        return self.interior_sums(yL, out)

    def gather_halo(self, yL, received, out):
        if len(self.halo_rows):
            missing = [p for p in self.gather_recv if p not in received]
            if missing:
                raise StateError(f"gather contributions from ranks {missing} were not delivered")
            parts = [yL] + [received[p] for p in sorted(self.gather_recv)]
            self.halo_sums(np.concatenate(parts), out)
        return out

    def gather(self, yL, received=None):
        """bG = Z^T yL over owned rows; ``received`` holds remote contributions by source rank."""
        yL = np.asarray(yL, dtype=np.float64).ravel()
        out = np.empty(self.n_owned)
        self.gather_interior(yL, out)
        if len(self.halo_rows):
            if received is None:
                raise StateError("gather needs remote contributions for shared DOFs")
            self.gather_halo(yL, received, out)
        return out

    # -- collective helpers ---------------------------------------------------------------

    def exchange_halo(self, transport, xG, algorithm=None):
        return self.unpack_halo(exchange(transport, self.halo_plan, self.pack_halo(xG),
                                         algorithm or self.algorithm))

    def gather_global(self, transport, yL, algorithm=None):
        yL = np.asarray(yL, dtype=np.float64).ravel()
        pending = start_exchange(transport, self.gather_plan, self.pack_gather(yL),
                                 algorithm or self.algorithm)
        out = np.empty(self.n_owned)
        self.gather_interior(yL, out)
        return self.gather_halo(yL, pending.wait(), out)

    def scatter_global(self, transport, xG, algorithm=None):
        return self.scatter(xG, self.exchange_halo(transport, xG, algorithm))

    def gather_scatter(self, transport, yL, algorithm=None):
        """yL' = Z (Z^T yL)."""
        return self.scatter_global(transport, self.gather_global(transport, yL, algorithm),
                                   algorithm)

    def compute_counts(self, transport=None, algorithm=None):
        """Per-slot degree: one gather-scatter of the all-ones vector, cached."""
        self.counts = self.gather_scatter(transport, np.ones(self.n_local), algorithm)
        return self.counts

    def degree_weights(self):
        """W[s] = 1 / (number of slots sharing the DOF of slot s)."""
        if self.counts is None:
            raise StateError("degree counts not computed; call compute_counts first")
        return 1.0 / self.counts

    def validate(self, transport):
        """Cross-check plans with every peer; raise :class:`SetupError` on mismatch."""
        if transport is None or transport.size == 1:
            return
        peers = sorted(set(self.halo_send_gids) | set(self.halo_recv_gids))
        empty = np.zeros(0, dtype=np.int64)
        for p in peers:
            transport.send(p, TAG_VALIDATE,
                           np.asarray(self.halo_send_gids.get(p, empty), "<i8").tobytes())
        for p in peers:
            got = np.frombuffer(transport.recv(p, TAG_VALIDATE), dtype="<i8")
            expected = self.halo_recv_gids.get(p, empty)
            if not np.array_equal(got, expected):
                raise SetupError(
                    f"rank {self.rank}: halo plan from rank {p} disagrees "
                    f"({len(got)} ids sent, {len(expected)} expected)")


def setup(local, seed=0):
    """Build the gather-scatter for one rank from its :class:`~hipbone.mesh.LocalMesh`."""
    me = local.rank
    node_ids = local.node_ids.reshape(-1)
    n_local = len(node_ids)
    n_per = node_ids.size // max(len(local.elements), 1)
    slot_elem = np.repeat(local.elements, n_per)

    shared_gids = np.fromiter(sorted(local.shared), dtype=np.int64, count=len(local.shared))
    members = [local.shared[int(g)] for g in shared_gids]
    owners = choose_owners(shared_gids, [{r for _, r in m} for m in members], seed)
    owner_of_shared = dict(zip(shared_gids.tolist(), owners.tolist()))

    referenced = np.unique(node_ids)
    ref_owner = np.full(len(referenced), me, dtype=np.int64)
    if len(shared_gids):
        pos = np.searchsorted(referenced, shared_gids)
        ok = (pos < len(referenced)) & (referenced[np.minimum(pos, len(referenced) - 1)]
                                        == shared_gids)
        if not ok.all():
            raise SetupError(f"rank {me}: shared node not referenced by any local element")
        ref_owner[pos] = owners
    owned = referenced[ref_owner == me]
    ghosts = referenced[ref_owner != me]

    ext_ids = np.concatenate([owned, ghosts])
    order = np.argsort(ext_ids, kind="stable")
    scatter_map = order[np.searchsorted(ext_ids[order], node_ids)]

    def owned_index(g):
        return np.searchsorted(owned, g)

    def ghost_index(g):
        return np.searchsorted(ghosts, g)

    # halo plan: owner sends xG to every other sharer, ascending gid per peer
    halo_send_g, halo_recv_g = {}, {}
    for g, m, o in zip(shared_gids.tolist(), members, owners.tolist()):
        ranks = sorted({r for _, r in m})
        if o == me:
            for r in ranks:
                if r != me:
                    halo_send_g.setdefault(r, []).append(g)
        else:
            halo_recv_g.setdefault(o, []).append(g)
    halo_send_gids = {p: np.array(v, dtype=np.int64) for p, v in halo_send_g.items()}
    halo_recv_gids = {p: np.array(v, dtype=np.int64) for p, v in halo_recv_g.items()}
    halo_send = {p: owned_index(v) for p, v in halo_send_gids.items()}
    halo_recv = {p: ghost_index(v) for p, v in halo_recv_gids.items()}

    # gather CSR over owned rows, slots in ascending global element order
    slot_order = np.lexsort((slot_elem, node_ids))
    sorted_ids = node_ids[slot_order]
    is_owned_slot = np.isin(sorted_ids, owned)
    row_slots = slot_order[is_owned_slot]
    row_ids = sorted_ids[is_owned_slot]
    gather_indptr = np.searchsorted(row_ids, np.concatenate([owned, [np.iinfo(np.int64).max]]))
    gather_indptr[-1] = len(row_ids)
    gather_slots = row_slots

    # slot lookup for (gid, element) pairs
    shared_slots = np.flatnonzero(np.isin(node_ids, shared_gids))
    slot_key = {(int(node_ids[s]), int(slot_elem[s])): int(s) for s in shared_slots}

    # gather plan: sharers send one contribution per (element, node) to the owner,
    # ordered by (gid, global element id)
    gather_send, gather_recv = {}, {}
    recv_members = {}
    for g, m, o in zip(shared_gids.tolist(), members, owners.tolist()):
        if o == me:
            for e, r in m:
                if r != me:
                    recv_members.setdefault(r, []).append((g, e))
        else:
            for e, r in m:
                if r == me:
                    gather_send.setdefault(o, []).append(slot_key[(g, e)])
    gather_send = {p: np.array(v, dtype=np.int64) for p, v in gather_send.items()}
    gather_recv = {p: len(v) for p, v in recv_members.items()}

    # halo rows merge local slots and received contributions by global element id
    halo_mask = np.zeros(len(owned), dtype=bool)
    my_shared_owned = [g for g, o in owner_of_shared.items() if o == me]
    if my_shared_owned:
        halo_mask[owned_index(np.array(my_shared_owned, dtype=np.int64))] = True
    halo_rows = np.flatnonzero(halo_mask)
    interior_rows = np.flatnonzero(~halo_mask)

    offset = n_local
    recv_pos = {}
    for p in sorted(recv_members):
        for n, key in enumerate(recv_members[p]):
            recv_pos[key] = offset + n
        offset += len(recv_members[p])

    h_indptr, h_cols = [0], []
    for row in halo_rows:
        g = int(owned[row])
        for e, r in local.shared[g]:
            h_cols.append(slot_key[(g, e)] if r == me else recv_pos[(g, e)])
        h_indptr.append(len(h_cols))
    halo_sums = RowSums(halo_rows, np.array(h_indptr, dtype=np.int64),
                        np.array(h_cols, dtype=np.int64))

    i_lengths = np.diff(gather_indptr)[interior_rows]
    i_indptr = np.concatenate([[0], np.cumsum(i_lengths)]).astype(np.int64)
    take = np.repeat(gather_indptr[interior_rows], i_lengths) + (
        np.arange(i_indptr[-1]) - np.repeat(i_indptr[:-1], i_lengths))
    interior_sums = RowSums(interior_rows, i_indptr, gather_slots[take])

    gs = GatherScatter(
        rank=me, n_local=n_local, owned=owned, ghosts=ghosts, scatter_map=scatter_map,
        gather_indptr=gather_indptr, gather_slots=gather_slots,
        halo_send=halo_send, halo_recv=halo_recv,
        halo_send_gids=halo_send_gids, halo_recv_gids=halo_recv_gids,
        gather_send=gather_send, gather_recv=gather_recv,
        interior_rows=interior_rows, halo_rows=halo_rows,
        interior_sums=interior_sums, halo_sums=halo_sums,
        owner_of_shared=owner_of_shared)
    if local.grid.P == 1 or not local.neighbors:
        gs.compute_counts(None)
    return gs
