"""Rank-addressed message transports and the few collectives built on them.

Two implementations share one contract: tagged point-to-point sends of byte
payloads that are buffered (a send never blocks on the receiver), and
receives matched by ``(source, tag)`` that preserve posting order for each
``(source, dest, tag)`` triple.

* :class:`InProcessTransport` -- ranks are threads of one process that
  exchange messages through per-rank mailboxes. Used by the test suite.
* :class:`SocketTransport` -- one OS process per rank, TCP connections,
  frames encoded by :func:`encode_frame`.
"""

import logging
import os
import pickle
import socket
import struct
import subprocess
import sys
import tempfile
import threading
import time
from collections import defaultdict, deque

import numpy as np

from .errors import ProtocolError, TransportError

logger = logging.getLogger(__name__)

MAGIC = 0x4742
VERSION = 0x01
FRAME_HEADER = struct.Struct("<HBBIQ")   # magic, version, tag, source, payload length

DEFAULT_TIMEOUT = 120.0

# tags reserved for the collectives below; exchange algorithms use their own
TAG_ALLREDUCE = 200
TAG_BCAST = 201
TAG_BARRIER = 202


def encode_frame(tag, source, payload):
    if not 0 <= tag <= 0xFF:
        raise ProtocolError(f"tag {tag} does not fit in one byte")
    return FRAME_HEADER.pack(MAGIC, VERSION, tag, source, len(payload)) + bytes(payload)


def decode_header(header):
    magic, version, tag, source, length = FRAME_HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic 0x{magic:04x}")
    if version != VERSION:
        raise ProtocolError(f"unsupported frame version {version}")
    return tag, source, length


def decode_frame(frame):
    """Split one complete frame into ``(tag, source, payload)``."""
    if len(frame) < FRAME_HEADER.size:
        raise ProtocolError("truncated frame header")
    tag, source, length = decode_header(frame[:FRAME_HEADER.size])
    payload = frame[FRAME_HEADER.size:]
    if len(payload) != length:
        raise ProtocolError(f"frame declares {length} payload bytes, carries {len(payload)}")
    return tag, source, bytes(payload)


def pack_f64(values):
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def unpack_f64(data):
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


class Mailbox:
    """Receive queues keyed by ``(source, tag)``."""

    def __init__(self):
        self._queues = defaultdict(deque)
        self._cond = threading.Condition()
        self._failure = None

    def put(self, source, tag, payload):
        with self._cond:
            self._queues[(source, tag)].append(payload)
            self._cond.notify_all()

    def fail(self, reason):
        with self._cond:
            self._failure = reason
            self._cond.notify_all()

    def get(self, source, tag, timeout, me):
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                q = self._queues.get((source, tag))
                if q:
                    return q.popleft()
                if self._failure is not None:
                    raise TransportError(
                        f"rank {me} <- rank {source} (tag {tag}): {self._failure}")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportError(
                        f"rank {me} <- rank {source} (tag {tag}): receive timed out "
                        f"after {timeout:.1f} s")
                self._cond.wait(remaining)


class Transport:
    """Common surface and byte/message meters of both transports."""

    def __init__(self, rank, size, timeout=DEFAULT_TIMEOUT):
        self.rank = rank
        self.size = size
        self.timeout = timeout
        self.bytes_sent = 0
        self.messages_sent = 0

    def send(self, dest, tag, payload):
        if not 0 <= dest < self.size:
            raise TransportError(f"rank {self.rank} -> rank {dest}: no such rank")
        self.bytes_sent += len(payload)
        self.messages_sent += 1
        self._deliver(dest, tag, bytes(payload))

    def recv(self, source, tag, timeout=None):
        return self._mailbox.get(source, tag, self.timeout if timeout is None else timeout,
                                 self.rank)

    def waitall(self):
        """Complete all posted sends. Sends are buffered, so this is a no-op."""

    def reset_meters(self):
        self.bytes_sent = 0
        self.messages_sent = 0

    def close(self):
        pass


class InProcessWorld:
    """Shared state for ``size`` in-process ranks."""

    def __init__(self, size, timeout=DEFAULT_TIMEOUT):
        self.size = size
        self.mailboxes = [Mailbox() for _ in range(size)]
        self.transports = [InProcessTransport(self, r, timeout) for r in range(size)]

    def abort(self, reason):
        for box in self.mailboxes:
            box.fail(reason)


class InProcessTransport(Transport):
    def __init__(self, world, rank, timeout=DEFAULT_TIMEOUT):
        super().__init__(rank, world.size, timeout)
        self.world = world
        self._mailbox = world.mailboxes[rank]

    def _deliver(self, dest, tag, payload):
        self.world.mailboxes[dest].put(self.rank, tag, payload)


def run_in_process(size, fn, *args, timeout=DEFAULT_TIMEOUT, **kwargs):
    """Run ``fn(transport, *args, **kwargs)`` on ``size`` thread ranks.

    Returns the per-rank results in rank order. The first exception raised
    by any rank aborts the others and is re-raised.
    """
    world = InProcessWorld(size, timeout)
    results = [None] * size
    errors = [None] * size

    def worker(r):
        try:
            results[r] = fn(world.transports[r], *args, **kwargs)
        except BaseException as exc:   # noqa: BLE001 - propagated below
            errors[r] = exc
            world.abort(f"rank {r} failed: {exc!r}")

    if size == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(r,), daemon=True) for r in range(size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    # report the root cause rather than the aborts it triggered
    primary = [e for e in errors if e is not None and not isinstance(e, TransportError)]
    failed = primary or [e for e in errors if e is not None]
    if failed:
        raise failed[0]
    return results


class SocketTransport(Transport):
    """TCP transport: one listening socket per rank, one connection per ordered pair."""

    def __init__(self, rank, peers, listener=None, timeout=DEFAULT_TIMEOUT):
        super().__init__(rank, len(peers), timeout)
        self.peers = [(h, int(p)) for h, p in peers]
        self._mailbox = Mailbox()
        self._out = {}
        self._out_lock = threading.Lock()
        self._readers = []
        self._closed = False
        if listener is None:
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            listener.bind(self.peers[rank])
            listener.listen(max(8, self.size))
        self._listener = listener
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()

    def _accept_loop(self):
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._read_loop, args=(conn,), daemon=True)
            self._readers.append((conn, t))
            t.start()

    @staticmethod
    def _read_exact(conn, n):
        chunks = []
        while n:
            chunk = conn.recv(min(n, 1 << 20))
            if not chunk:
                return None
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def _read_loop(self, conn):
        try:
            while True:
                header = self._read_exact(conn, FRAME_HEADER.size)
                if header is None:
                    return
                tag, source, length = decode_header(header)
                payload = self._read_exact(conn, length) if length else b""
                if payload is None:
                    raise ProtocolError("connection closed inside a frame")
                self._mailbox.put(source, tag, payload)
        except (OSError, ProtocolError) as exc:
            if not self._closed:
                self._mailbox.fail(f"connection error: {exc}")

    def _connection(self, dest):
        with self._out_lock:
            conn = self._out.get(dest)
            if conn is not None:
                return conn
            deadline = time.monotonic() + self.timeout
            while True:
                try:
                    conn = socket.create_connection(self.peers[dest], timeout=self.timeout)
                    break
                except OSError as exc:
                    if time.monotonic() > deadline:
                        raise TransportError(
                            f"rank {self.rank} -> rank {dest}: cannot connect ({exc})") from exc
                    time.sleep(0.05)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._out[dest] = conn
            return conn

    def _deliver(self, dest, tag, payload):
        if dest == self.rank:
            self._mailbox.put(self.rank, tag, payload)
            return
        conn = self._connection(dest)
        try:
            conn.sendall(encode_frame(tag, self.rank, payload))
        except OSError as exc:
            raise TransportError(f"rank {self.rank} -> rank {dest}: send failed ({exc})") from exc

    def close(self):
        self._closed = True
        for conn in self._out.values():
            try:
                conn.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            conn.close()
        try:
            self._listener.close()
        except OSError:
            pass
        for conn, t in self._readers:
            t.join(timeout=1.0)
            conn.close()


def free_ports(count, host="127.0.0.1"):
    """Ask the OS for ``count`` currently unused TCP ports."""
    socks, ports = [], []
    for _ in range(count):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.bind((host, 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


def run_socket_ranks(size, fn, *args, timeout=DEFAULT_TIMEOUT, **kwargs):
    """Launch ``size`` local processes, each running ``fn(transport, *args, **kwargs)``.

    Each rank is a ``python -m hipbone.launch`` subprocess connected to the
    others by :class:`SocketTransport`. ``fn`` must be importable and its
    arguments picklable. Returns per-rank results in rank order.
    """
    peers = [("127.0.0.1", p) for p in free_ports(size)]
    peer_arg = ",".join(f"{h}:{p}" for h, p in peers)
    with tempfile.TemporaryDirectory(prefix="hipbone-") as tmp:
        job = os.path.join(tmp, "job.pkl")
        with open(job, "wb") as fh:
            pickle.dump((fn, args, kwargs, timeout), fh)
        # children import fn by module name, so they need the parent's search path
        env = dict(os.environ, PYTHONPATH=os.pathsep.join(p for p in sys.path if p))
        procs = []
        for r in range(size):
            out = os.path.join(tmp, f"rank{r}.pkl")
            cmd = [sys.executable, "-m", "hipbone.launch", job, out,
                   "--rank", str(r), "--peers", peer_arg]
            procs.append((subprocess.Popen(cmd, stdout=subprocess.PIPE,
                                           stderr=subprocess.STDOUT, env=env), out))
        results, failures = [], []
        try:
            for r, (proc, out) in enumerate(procs):
                try:
                    log, _ = proc.communicate(timeout=timeout)
                except subprocess.TimeoutExpired:
                    failures.append(f"rank {r} timed out after {timeout} s")
                    continue
                if proc.returncode != 0 or not os.path.exists(out):
                    failures.append(f"rank {r} exited with {proc.returncode}: "
                                    f"{log.decode(errors='replace').strip()[-2000:]}")
                    continue
                with open(out, "rb") as fh:
                    results.append(pickle.load(fh))
        finally:
            for proc, _ in procs:
                if proc.poll() is None:
                    proc.kill()
                    proc.wait()
        if failures:
            raise TransportError("socket run failed: " + "; ".join(failures))
        return results


def run_socket_rank(rank, peers, fn, *args, timeout=DEFAULT_TIMEOUT, **kwargs):
    """Body of one socket rank: connect, run ``fn``, synchronize, disconnect."""
    transport = SocketTransport(rank, peers, timeout=timeout)
    try:
        result = fn(transport, *args, **kwargs)
        barrier(transport)
        return result
    finally:
        transport.close()


def parse_peers(text):
    peers = []
    for item in text.split(","):
        host, _, port = item.strip().rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"peer {item!r} is not host:port")
        peers.append((host, int(port)))
    return peers


# -- collectives ---------------------------------------------------------------------------

class PendingAllreduce:
    """Handle of a started sum all-reduce; :meth:`wait` combines in ascending rank order."""

    def __init__(self, transport, local):
        self.transport = transport
        self.local = float(local)

    def wait(self):
        t = self.transport
        if t is None or t.size == 1:
            return self.local
        total = None
        for src in range(t.size):
            v = self.local if src == t.rank else struct.unpack(
                "<d", t.recv(src, TAG_ALLREDUCE))[0]
            total = v if total is None else total + v
        return total


def allreduce_begin(transport, local):
    if transport is not None and transport.size > 1:
        data = struct.pack("<d", float(local))
        for dest in range(transport.size):
            if dest != transport.rank:
                transport.send(dest, TAG_ALLREDUCE, data)
    return PendingAllreduce(transport, local)


def allreduce_sum(transport, local):
    return allreduce_begin(transport, local).wait()


def broadcast_bytes(transport, data, root=0):
    if transport is None or transport.size == 1:
        return data
    if transport.rank == root:
        for dest in range(transport.size):
            if dest != root:
                transport.send(dest, TAG_BCAST, data)
        return data
    return transport.recv(root, TAG_BCAST)


def barrier(transport):
    if transport is None or transport.size == 1:
        return
    for dest in range(transport.size):
        if dest != transport.rank:
            transport.send(dest, TAG_BARRIER, b"")
    for src in range(transport.size):
        if src != transport.rank:
            transport.recv(src, TAG_BARRIER)
