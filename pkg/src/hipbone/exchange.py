"""Nearest-neighbor exchange algorithms over a :class:`~hipbone.transport.Transport`.

A payload set maps each destination rank to a float64 array; the result maps
each source rank to the array it addressed to this rank. All three
algorithms deliver identical arrays; they differ in message count and volume.
"""

import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ProtocolError, TransportError
from .transport import broadcast_bytes, pack_f64, unpack_f64

logger = logging.getLogger(__name__)

ALGORITHMS = ("pairwise", "alltoall", "crystalrouter")
# tie-break preference for tune_exchange
PREFERENCE = ("pairwise", "crystalrouter", "alltoall")

TAG_PAIRWISE = 10
TAG_ALLTOALL = 11
TAG_CRYSTAL = 12

# routed record: destination rank, origin rank, payload length in bytes
RECORD_HEADER = struct.Struct("<IIQ")


@dataclass
class ExchangePlan:
    """Message sizes (in float64 words) this rank sends to and expects from each peer."""

    send_counts: Dict[int, int] = field(default_factory=dict)
    recv_counts: Dict[int, int] = field(default_factory=dict)
    algorithm: str = "pairwise"

    def __post_init__(self):
        self.send_counts = {int(r): int(c) for r, c in self.send_counts.items() if c > 0}
        self.recv_counts = {int(r): int(c) for r, c in self.recv_counts.items() if c > 0}

    @property
    def peers(self):
        return sorted(set(self.send_counts) | set(self.recv_counts))

    def _check_payloads(self, payloads, rank):
        for dest, count in self.send_counts.items():
            got = len(payloads.get(dest, ()))
            if got != count:
                raise TransportError(
                    f"rank {rank} -> rank {dest}: payload has {got} words, plan expects {count}")

    def _check_received(self, received, rank):
        for src, count in self.recv_counts.items():
            got = received.get(src)
            if got is None or len(got) != count:
                raise TransportError(
                    f"rank {rank} <- rank {src}: expected {count} words, "
                    f"got {None if got is None else len(got)}")


# -- pairwise ------------------------------------------------------------------------------

def _pairwise_start(transport, plan, payloads):
    for dest in sorted(plan.send_counts):
        transport.send(dest, TAG_PAIRWISE, pack_f64(payloads[dest]))


def _pairwise_finish(transport, plan):
    return {src: unpack_f64(transport.recv(src, TAG_PAIRWISE)) for src in sorted(plan.recv_counts)}


def exchange_pairwise(transport, plan, payloads):
    """Direct sends to every peer with data: most messages, least volume."""
    return start_exchange(transport, plan, payloads, "pairwise").wait()


# -- all-to-all ----------------------------------------------------------------------------

def _alltoall_start(transport, plan, payloads):
    empty = b""
    for dest in range(transport.size):
        if dest != transport.rank:
            block = pack_f64(payloads[dest]) if dest in plan.send_counts else empty
            transport.send(dest, TAG_ALLTOALL, block)


def _alltoall_finish(transport, plan):
    received = {}
    for src in range(transport.size):
        if src == transport.rank:
            continue
        block = transport.recv(src, TAG_ALLTOALL)
        if src in plan.recv_counts:
            received[src] = unpack_f64(block)
        elif block:
            raise ProtocolError(f"rank {transport.rank} <- rank {src}: unexpected all-to-all block")
    return received


def exchange_alltoall(transport, plan, payloads):
    """One collective round in which every rank sends a (possibly empty) block to every other."""
    return start_exchange(transport, plan, payloads, "alltoall").wait()


# -- crystal router ------------------------------------------------------------------------

def crystal_rounds(P):
    """Number of hypercube folds, ``ceil(log2 P)``."""
    return (P - 1).bit_length() if P > 1 else 0


def encode_records(records):
    parts = []
    for dest, origin, payload in records:
        parts.append(RECORD_HEADER.pack(dest, origin, len(payload)))
        parts.append(payload)
    return b"".join(parts)


def decode_records(data):
    records, pos = [], 0
    while pos < len(data):
        if pos + RECORD_HEADER.size > len(data):
            raise ProtocolError("truncated routing header")
        dest, origin, length = RECORD_HEADER.unpack_from(data, pos)
        pos += RECORD_HEADER.size
        if pos + length > len(data):
            raise ProtocolError(f"routing header declares {length} bytes past end of bundle")
        records.append((dest, origin, data[pos:pos + length]))
        pos += length
    return records


def _fold(lo, n, me):
    """One fold of block ``[lo, lo+n)`` from ``me``'s point of view.

    Returns ``(split, send_to, recv_from, new_lo, new_n)``. The lower half
    has ``ceil(n/2)`` ranks; when ``n`` is odd the last lower rank has a
    virtual partner, whose traffic is folded onto the last upper rank. That
    exchange is one-way.
    """
    nl = (n + 1) // 2
    split = lo + nl
    if me < split:
        partner = me + nl
        if partner >= lo + n:
            return split, lo + n - 1, [], lo, nl
        return split, partner, [partner], lo, nl
    recv = [me - nl]
    if n % 2 and me == lo + n - 1:
        recv.append(split - 1)
    return split, me - nl, recv, split, n - nl


def crystal_schedule(rank, P):
    """Per fold ``(send_to, recv_from)`` for ``rank``; ``None`` marks an idle fold."""
    lo, n, out = 0, P, []
    for _ in range(crystal_rounds(P)):
        if n == 1:
            out.append(None)
            continue
        _, send_to, recv_from, lo, n = _fold(lo, n, rank)
        out.append((send_to, recv_from))
    return out


def crystal_partners(rank, P):
    """Distinct peers ``rank`` exchanges with in each fold."""
    return [sorted({s[0], *s[1]}) if s else [] for s in crystal_schedule(rank, P)]


def _crystal_run(transport, plan, payloads, trace=None):
    P, me = transport.size, transport.rank
    held = [(dest, me, pack_f64(payloads[dest])) for dest in sorted(plan.send_counts)]
    lo, n = 0, P
    k = crystal_rounds(P)
    for _ in range(k):
        if n == 1:
            continue
        split, send_to, recv_from, new_lo, new_n = _fold(lo, n, me)
        mine = [r for r in held if new_lo <= r[0] < new_lo + new_n]
        move = [r for r in held if not new_lo <= r[0] < new_lo + new_n]
        transport.send(send_to, TAG_CRYSTAL, encode_records(move))
        held = mine
        for src in recv_from:
            for dest, origin, payload in decode_records(transport.recv(src, TAG_CRYSTAL)):
                if not new_lo <= dest < new_lo + new_n:
                    raise ProtocolError(
                        f"rank {me} received a record for rank {dest} outside "
                        f"[{new_lo}, {new_lo + new_n})")
                held.append((dest, origin, payload))
                if trace is not None and dest != me:
                    trace.setdefault((origin, dest), []).append(me)
        lo, n = new_lo, new_n
    received = {}
    for dest, origin, payload in held:
        if dest != me:
            raise ProtocolError(f"rank {me} finished holding a record for rank {dest}")
        if origin in received:
            raise ProtocolError(f"duplicate record from rank {origin}")
        received[origin] = unpack_f64(payload)
    return received, k


def exchange_crystal_router(transport, plan, payloads, trace=None):
    """Recursive hypercube folding in ``ceil(log2 P)`` rounds.

    In each fold the current block of ranks is halved and every rank forwards
    the records addressed to the other half to its partner there. ``trace``, if a
    dict, collects the intermediate ranks each ``(origin, dest)`` record
    passed through.
    """
    pending = start_exchange(transport, plan, payloads, "crystalrouter", trace=trace)
    return pending.wait()


# -- split-phase interface -----------------------------------------------------------------

class PendingExchange:
    """An exchange whose sends have been posted; :meth:`wait` returns the received arrays."""

    def __init__(self, transport, plan, payloads, algorithm, trace=None):
        self.transport = transport
        self.plan = plan
        self.algorithm = algorithm
        self.payloads = payloads
        self.trace = trace
        self.rounds = 0

    def wait(self):
        t, plan = self.transport, self.plan
        if t is None or t.size == 1:
            if plan.send_counts or plan.recv_counts:
                raise TransportError("single-rank exchange with non-empty plan")
            return {}
        if self.algorithm == "pairwise":
            received = _pairwise_finish(t, plan)
        elif self.algorithm == "alltoall":
            received = _alltoall_finish(t, plan)
        else:
            received, self.rounds = _crystal_run(t, plan, self.payloads, self.trace)
        plan._check_received(received, t.rank)
        return received


def start_exchange(transport, plan, payloads, algorithm=None, trace=None):
    """Post the sends of an exchange and return a :class:`PendingExchange`.

    Pairwise and all-to-all post all their sends here so local work can
    proceed while messages are in flight. The crystal router forwards data
    between folds and therefore runs entirely inside ``wait``.
    """
    algorithm = algorithm or plan.algorithm
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown exchange algorithm {algorithm!r}")
    me = 0 if transport is None else transport.rank
    plan._check_payloads(payloads, me)
    if transport is not None and transport.size > 1:
        if algorithm == "pairwise":
            _pairwise_start(transport, plan, payloads)
        elif algorithm == "alltoall":
            _alltoall_start(transport, plan, payloads)
    return PendingExchange(transport, plan, payloads, algorithm, trace)


def exchange(transport, plan, payloads, algorithm=None):
    return start_exchange(transport, plan, payloads, algorithm).wait()


# -- autotuning ----------------------------------------------------------------------------

def tune_exchange(transport, plan, warmup=5, trials=20, force=None, seed=0):
    """Time every algorithm on ``plan`` and return ``(choice, medians)``.

    Collective: all ranks must call it. Rank 0's medians decide and the choice
    is broadcast. ``force`` bypasses timing. Ties prefer pairwise, then
    crystal router, then all-to-all.
    """
    if force is not None:
        if force not in ALGORITHMS:
            raise ValueError(f"unknown exchange algorithm {force!r}")
        return force, {}
    if transport is None or transport.size == 1:
        return "pairwise", {}
    rng = np.random.default_rng(seed + transport.rank)
    payloads = {d: rng.standard_normal(c) for d, c in plan.send_counts.items()}
    medians = {}
    for alg in ALGORITHMS:
        for _ in range(warmup):
            exchange(transport, plan, payloads, alg)
        samples = []
        for _ in range(trials):
            t0 = time.perf_counter()
            exchange(transport, plan, payloads, alg)
            samples.append(time.perf_counter() - t0)
        medians[alg] = float(np.median(samples))
    best = min(PREFERENCE, key=lambda a: (medians[a], PREFERENCE.index(a)))
    choice = broadcast_bytes(transport, best.encode(), root=0).decode()
    logger.debug("rank %d exchange medians %s -> %s", transport.rank, medians, choice)
    return choice, medians
