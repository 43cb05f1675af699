"""Message passing between training nodes.

Every frame on the wire is little-endian ``[u32 tag][u64 length][payload]``.
Tags:

    1  handshake       u32 protocol version, 8-byte dataset hash, u32 node id
    2  sparse weight    one class's weight vector as sorted nonzero entries
    3  allreduce chunk  u32 sequence, u64 count, count f64 values
    4  barrier token    u64 generation counter
    5  shutdown         empty payload

Two backends implement the same blocking point-to-point interface: an
in-process group backed by queues (one transport per worker thread) and a
TCP mesh where every node connects to every other. All calls on a transport
must come from a single designated coordinator thread per node; the
implementations are not thread-safe and do not need to be.

Collectives are built on the point-to-point layer. ``allreduce_sum`` has
node 0 accumulate contributions in ascending node order and broadcast the
resulting buffer verbatim, so every node ends up with bit-identical floats
regardless of network timing.
"""

from __future__ import annotations

import socket
import struct
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from queue import Empty, SimpleQueue

import numpy as np

PROTOCOL_VERSION = 1

TAG_HANDSHAKE = 1
TAG_SPARSE_WEIGHT = 2
TAG_ALLREDUCE = 3
TAG_BARRIER = 4
TAG_SHUTDOWN = 5

_FRAME = struct.Struct("<IQ")
_HANDSHAKE = struct.Struct("<I8sI")
_CHUNK_HEAD = struct.Struct("<IQ")
_TOKEN = struct.Struct("<Q")
_SWM_HEAD = struct.Struct("<IQ")
# Packed (u32 index, f64 value) pairs, 12 bytes each.
_ENTRY_DTYPE = np.dtype([("idx", "<u4"), ("val", "<f8")])

# Allreduce payloads are split so a single frame stays comfortably under
# typical socket buffer scheduling; 1M doubles = 8MB per chunk.
ALLREDUCE_CHUNK = 1 << 20


class TransportError(RuntimeError):
    """Protocol violation, peer failure, or handshake mismatch."""


@dataclass(frozen=True)
class SparseWeightMessage:
    """One class's weight vector, nonzeros only, indices strictly ascending."""

    class_id: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        idx = np.ascontiguousarray(self.indices, dtype=np.uint32)
        val = np.ascontiguousarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or val.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be matching 1-d arrays")
        if idx.size and np.any(idx[1:] <= idx[:-1]):
            raise ValueError("indices must be strictly increasing")
        if np.any(val == 0.0) or not np.all(np.isfinite(val)):
            raise ValueError("values must be nonzero and finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @classmethod
    def from_dense(cls, class_id: int, vector: np.ndarray) -> "SparseWeightMessage":
        vector = np.asarray(vector, dtype=np.float64)
        idx = np.flatnonzero(vector)
        return cls(class_id, idx.astype(np.uint32), vector[idx])

    def to_dense(self, num_features: int) -> np.ndarray:
        if self.nnz and int(self.indices[-1]) >= num_features:
            raise ValueError("index beyond feature count")
        out = np.zeros(num_features)
        out[self.indices] = self.values
        return out

    def to_bytes(self) -> bytes:
        entries = np.empty(self.nnz, dtype=_ENTRY_DTYPE)
        entries["idx"] = self.indices
        entries["val"] = self.values
        return _SWM_HEAD.pack(self.class_id, self.nnz) + entries.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["SparseWeightMessage", int]:
        """Decode one message starting at offset; returns (message, next offset)."""
        if len(buf) - offset < _SWM_HEAD.size:
            raise TransportError("sparse weight message truncated")
        class_id, nnz = _SWM_HEAD.unpack_from(buf, offset)
        offset += _SWM_HEAD.size
        need = nnz * _ENTRY_DTYPE.itemsize
        if len(buf) - offset < need:
            raise TransportError("sparse weight message truncated")
        entries = np.frombuffer(buf, dtype=_ENTRY_DTYPE, count=nnz, offset=offset)
        offset += need
        try:
            msg = cls(class_id, entries["idx"].copy(), entries["val"].copy())
        except ValueError as exc:
            raise TransportError(str(exc)) from exc
        return msg, offset


def encode_frame(tag: int, payload: bytes) -> bytes:
    return _FRAME.pack(tag, len(payload)) + payload


class Transport(ABC):
    """Blocking point-to-point channel plus collectives over a node group."""

    node_id: int
    num_nodes: int

    def __init__(self, node_id: int, num_nodes: int) -> None:
        self.node_id = node_id
        self.num_nodes = num_nodes
        self._barrier_gen = 0

    @abstractmethod
    def send(self, dest: int, tag: int, payload: bytes) -> None: ...

    @abstractmethod
    def recv(self, source: int, expect: int | None = None) -> tuple[int, bytes]:
        """Block for the next frame from source; returns (tag, payload)."""

    @abstractmethod
    def close(self) -> None: ...

    def _check(self, tag: int, expect: int | None, source: int) -> None:
        if expect is not None and tag != expect:
            raise TransportError(
                f"expected tag {expect} from node {source}, got {tag}"
            )

    def barrier(self) -> None:
        """All-to-all token exchange; returns once every node has arrived."""
        self._barrier_gen += 1
        token = _TOKEN.pack(self._barrier_gen)
        for peer in range(self.num_nodes):
            if peer != self.node_id:
                self.send(peer, TAG_BARRIER, token)
        for peer in range(self.num_nodes):
            if peer == self.node_id:
                continue
            _, payload = self.recv(peer, expect=TAG_BARRIER)
            (gen,) = _TOKEN.unpack(payload)
            if gen != self._barrier_gen:
                raise TransportError(
                    f"barrier generation mismatch: node {peer} sent {gen}, "
                    f"expected {self._barrier_gen}"
                )

    def allreduce_sum(self, vector: np.ndarray) -> np.ndarray:
        """Sum a float64 vector across nodes; identical bytes on every node.

        Node 0 receives every contribution, adds them in ascending node
        order, and sends the result buffer back out, so floating-point
        rounding cannot depend on arrival order.
        """
        vector = np.ascontiguousarray(vector, dtype=np.float64)
        length = vector.size
        if self.num_nodes == 1:
            total = np.zeros(length)
            total += vector
            return total
        if self.node_id == 0:
            total = np.zeros(length)
            total += vector
            for src in range(1, self.num_nodes):
                total += self._recv_chunks(src, length)
            for dest in range(1, self.num_nodes):
                self._send_chunks(dest, total)
            return total
        self._send_chunks(0, vector)
        return self._recv_chunks(0, length)

    def _send_chunks(self, dest: int, vector: np.ndarray) -> None:
        seq = 0
        for start in range(0, max(vector.size, 1), ALLREDUCE_CHUNK):
            piece = vector[start : start + ALLREDUCE_CHUNK]
            head = _CHUNK_HEAD.pack(seq, piece.size)
            self.send(dest, TAG_ALLREDUCE, head + piece.tobytes())
            seq += 1

    def _recv_chunks(self, source: int, length: int) -> np.ndarray:
        out = np.empty(length)
        got = 0
        expect_seq = 0
        while True:
            _, payload = self.recv(source, expect=TAG_ALLREDUCE)
            seq, count = _CHUNK_HEAD.unpack_from(payload, 0)
            if seq != expect_seq:
                raise TransportError(f"allreduce chunk {seq} out of order")
            body = payload[_CHUNK_HEAD.size :]
            if len(body) != count * 8:
                raise TransportError("allreduce chunk length mismatch")
            out[got : got + count] = np.frombuffer(body, dtype=np.float64)
            got += count
            expect_seq += 1
            if got >= length:
                break
        if got != length:
            raise TransportError("allreduce size mismatch")
        return out


class InProcessGroup:
    """A set of queue-connected transports for worker threads in one process."""

    def __init__(self, num_nodes: int) -> None:
        if num_nodes < 1:
            raise ValueError("need at least one node")
        self.num_nodes = num_nodes
        self._queues: dict[tuple[int, int], SimpleQueue] = {
            (src, dst): SimpleQueue()
            for src in range(num_nodes)
            for dst in range(num_nodes)
            if src != dst
        }

    def transport(self, node_id: int) -> "InProcessTransport":
        if not 0 <= node_id < self.num_nodes:
            raise ValueError(f"node id {node_id} out of range")
        return InProcessTransport(self, node_id)


class InProcessTransport(Transport):
    def __init__(self, group: InProcessGroup, node_id: int) -> None:
        super().__init__(node_id, group.num_nodes)
        self._group = group
        self._closed = False

    def send(self, dest: int, tag: int, payload: bytes) -> None:
        if self._closed:
            raise TransportError("transport is closed")
        if dest == self.node_id or not 0 <= dest < self.num_nodes:
            raise TransportError(f"bad destination {dest}")
        self._group._queues[(self.node_id, dest)].put((tag, bytes(payload)))

    def recv(self, source: int, expect: int | None = None) -> tuple[int, bytes]:
        if self._closed:
            raise TransportError("transport is closed")
        if source == self.node_id or not 0 <= source < self.num_nodes:
            raise TransportError(f"bad source {source}")
        try:
            tag, payload = self._group._queues[(source, self.node_id)].get(timeout=120.0)
        except Empty:
            raise TransportError(f"timed out waiting for node {source}") from None
        if tag == TAG_SHUTDOWN:
            raise TransportError(f"node {source} shut down")
        self._check(tag, expect, source)
        return tag, payload

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        # Wake any peer still blocked on this node, same as the TCP backend.
        for dest in range(self.num_nodes):
            if dest != self.node_id:
                self._group._queues[(self.node_id, dest)].put((TAG_SHUTDOWN, b""))


def parse_hosts(spec: str) -> list[tuple[str, int]]:
    """Parse "host:port,host:port,..." into address tuples."""
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        host, sep, port = part.rpartition(":")
        if not sep or not host:
            raise ValueError(f"bad address {part!r}, expected host:port")
        out.append((host, int(port)))
    if not out:
        raise ValueError("empty host list")
    return out


class TcpTransport(Transport):
    """Full mesh of TCP connections; node i listens at addresses[i].

    Higher-numbered nodes dial lower-numbered ones, so node 0 only accepts.
    Each new connection exchanges handshakes carrying the protocol version,
    an 8-byte dataset content hash, and the sender's node id; any mismatch
    aborts the join.
    """

    def __init__(
        self,
        node_id: int,
        addresses: list[tuple[str, int]],
        dataset_hash: bytes,
        timeout: float = 120.0,
    ) -> None:
        super().__init__(node_id, len(addresses))
        if not 0 <= node_id < len(addresses):
            raise ValueError(f"node id {node_id} out of range")
        if len(dataset_hash) != 8:
            raise ValueError("dataset hash must be 8 bytes")
        self._hash = bytes(dataset_hash)
        self._timeout = timeout
        self._peers: dict[int, socket.socket] = {}
        self._listener: socket.socket | None = None
        host, port = addresses[node_id]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((host, port))
        listener.listen(self.num_nodes)
        listener.settimeout(timeout)
        self._listener = listener
        try:
            for lower in range(node_id):
                self._dial(lower, addresses[lower])
            for _ in range(node_id + 1, self.num_nodes):
                self._accept()
        except BaseException:
            self.close()
            raise
        listener.close()
        self._listener = None

    def _handshake_bytes(self) -> bytes:
        return _HANDSHAKE.pack(PROTOCOL_VERSION, self._hash, self.node_id)

    def _verify_handshake(self, payload: bytes) -> int:
        if len(payload) != _HANDSHAKE.size:
            raise TransportError("handshake payload has wrong size")
        version, digest, peer_id = _HANDSHAKE.unpack(payload)
        if version != PROTOCOL_VERSION:
            raise TransportError(
                f"protocol version mismatch: peer has {version}, "
                f"this node has {PROTOCOL_VERSION}"
            )
        if digest != self._hash:
            raise TransportError("dataset content hash mismatch between nodes")
        if not 0 <= peer_id < self.num_nodes or peer_id == self.node_id:
            raise TransportError(f"invalid peer node id {peer_id}")
        if peer_id in self._peers:
            raise TransportError(f"duplicate connection from node {peer_id}")
        return peer_id

    def _dial(self, peer: int, address: tuple[str, int]) -> None:
        deadline = time.monotonic() + self._timeout
        last_error: OSError | None = None
        while time.monotonic() < deadline:
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            sock.settimeout(self._timeout)
            try:
                sock.connect(address)
            except OSError as exc:
                sock.close()
                last_error = exc
                time.sleep(0.05)
                continue
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._send_raw(sock, TAG_HANDSHAKE, self._handshake_bytes())
            tag, payload = self._recv_raw(sock)
            if tag != TAG_HANDSHAKE:
                sock.close()
                raise TransportError(f"expected handshake, got tag {tag}")
            got = self._verify_handshake(payload)
            if got != peer:
                sock.close()
                raise TransportError(f"dialed node {peer} but reached {got}")
            self._peers[peer] = sock
            return
        raise TransportError(f"could not reach node {peer} at {address}: {last_error}")

    def _accept(self) -> None:
        assert self._listener is not None
        try:
            sock, _ = self._listener.accept()
        except socket.timeout:
            raise TransportError("timed out waiting for peers to join") from None
        sock.settimeout(self._timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        tag, payload = self._recv_raw(sock)
        if tag != TAG_HANDSHAKE:
            sock.close()
            raise TransportError(f"expected handshake, got tag {tag}")
        peer_id = self._verify_handshake(payload)
        self._send_raw(sock, TAG_HANDSHAKE, self._handshake_bytes())
        self._peers[peer_id] = sock

    @staticmethod
    def _read_exact(sock: socket.socket, count: int) -> bytes:
        chunks = bytearray()
        while len(chunks) < count:
            try:
                piece = sock.recv(count - len(chunks))
            except socket.timeout:
                raise TransportError("timed out reading from peer") from None
            except OSError as exc:
                raise TransportError(f"read failed: {exc}") from exc
            if not piece:
                raise TransportError("peer closed the connection")
            chunks.extend(piece)
        return bytes(chunks)

    def _send_raw(self, sock: socket.socket, tag: int, payload: bytes) -> None:
        try:
            sock.sendall(encode_frame(tag, payload))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv_raw(self, sock: socket.socket) -> tuple[int, bytes]:
        head = self._read_exact(sock, _FRAME.size)
        tag, length = _FRAME.unpack(head)
        payload = self._read_exact(sock, length) if length else b""
        return tag, payload

    def send(self, dest: int, tag: int, payload: bytes) -> None:
        if dest not in self._peers:
            raise TransportError(f"no connection to node {dest}")
        self._send_raw(self._peers[dest], tag, payload)

    def recv(self, source: int, expect: int | None = None) -> tuple[int, bytes]:
        if source not in self._peers:
            raise TransportError(f"no connection to node {source}")
        tag, payload = self._recv_raw(self._peers[source])
        if tag == TAG_SHUTDOWN:
            raise TransportError(f"node {source} shut down")
        self._check(tag, expect, source)
        return tag, payload

    def close(self) -> None:
        for sock in self._peers.values():
            try:
                sock.sendall(encode_frame(TAG_SHUTDOWN, b""))
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
        self._peers.clear()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
            self._listener = None
