"""Binary block formats for messages and vertex records.

Every block starts with a 24-byte little-endian header::

    magic      4s   b"GMSG" (messages) or b"GVTX" (vertices)
    version    u8   1
    sections   u8   vertex blocks: bit 0 = state present, bit 1 = adjacency present
    dtype      u8   ord("i") for int64 payload/state, ord("f") for float64
    width      u8   payload / state columns per record
    count      u64  number of records
    aux        u64  vertex blocks: byte length of the varint degree section

Message block body, one fixed-width record per message::

    dst i64 | src i64 | payload width x 8 bytes

Vertex block body, laid out column by column::

    ids      count x i64
    flags    count x u8                 (state section)
    state    count x width x 8 bytes    (state section)
    degrees  count x unsigned LEB128    (adjacency section, ``aux`` bytes)
    targets  E x i64                    (adjacency section)
    weights  E x f64                    (adjacency section)

So one vertex costs ``8`` id bytes, ``1 + 8 * width`` state bytes and
``varint(deg) + 16 * deg`` adjacency ("structure") bytes.  A file may hold
several blocks back to back.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DfsError

HEADER = struct.Struct("<4sBBBBQQ")
MSG_MAGIC = b"GMSG"
VTX_MAGIC = b"GVTX"
VERSION = 1
HAS_STATE = 1
HAS_ADJ = 2

FLAG_ACTIVE = 1
FLAG_SEED = 2

_DTYPES = {ord("i"): np.dtype("<i8"), ord("f"): np.dtype("<f8")}


def _dtype_code(dtype):
    return ord("f") if np.dtype(dtype).kind == "f" else ord("i")


# -- varints ---------------------------------------------------------------------


def varint_sizes(values):
    v = np.asarray(values, dtype=np.uint64)
    sizes = np.ones(v.shape, dtype=np.int64)
    for k in range(1, 10):
        sizes += v >= np.uint64(1 << (7 * k))
    return sizes


def encode_varints(values) -> bytes:
    v = np.asarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    sizes = varint_sizes(v)
    starts = np.zeros(len(v), dtype=np.int64)
    np.cumsum(sizes[:-1], out=starts[1:])
    out = np.zeros(int(sizes.sum()), dtype=np.uint8)
    for j in range(int(sizes.max())):
        sel = sizes > j
        chunk = ((v[sel] >> np.uint64(7 * j)) & np.uint64(0x7F)).astype(np.uint8)
        more = (sizes[sel] > j + 1).astype(np.uint8) << 7
        out[starts[sel] + j] = chunk | more
    return out.tobytes()


def decode_varints(buf, count) -> np.ndarray:
    b = np.frombuffer(buf, dtype=np.uint8)
    if count == 0:
        return np.empty(0, dtype=np.int64)
    ends = np.flatnonzero(b < 0x80)
    if len(ends) != count or (len(b) and ends[-1] != len(b) - 1):
        raise DfsError("corrupt varint section")
    starts = np.empty(count, dtype=np.int64)
    starts[0] = 0
    starts[1:] = ends[:-1] + 1
    lengths = ends - starts + 1
    out = np.zeros(count, dtype=np.uint64)
    for j in range(int(lengths.max())):
        sel = lengths > j
        out[sel] |= (b[starts[sel] + j] & np.uint64(0x7F)).astype(np.uint64) << np.uint64(7 * j)
    return out.astype(np.int64)


def adjacency_nbytes(degrees) -> int:
    """Serialized size of the adjacency section for the given degrees."""
    degrees = np.asarray(degrees, dtype=np.int64)
    return int(varint_sizes(degrees).sum() + 16 * degrees.sum())


# -- canonical message order ------------------------------------------------------

def _reverse_bits_within_bytes(v):
    """Reverse the bits inside every byte of the unsigned array ``v``, in place."""
    t = np.empty_like(v)
    for shift, mask in ((1, 0x55), (2, 0x33), (4, 0x0F)):
        m = v.dtype.type(int.from_bytes(bytes([mask]) * v.itemsize, "little"))
        s = v.dtype.type(shift)
        np.right_shift(v, s, out=t)
        t &= m
        v &= m
        v <<= s
        v |= t
    return v


def bit_reversed(ids) -> np.ndarray:
    """The 64 bits of each (non-negative) id in reverse order, as ``uint64``."""
    ids = np.asarray(ids)
    if ids.size and 0 <= int(ids.min()) and int(ids.max()) < (1 << 32):
        # the low half reversed lands in the high half; half the work
        v = _reverse_bits_within_bytes(ids.astype(np.uint32))
        return v.byteswap().astype(np.uint64) << np.uint64(32)
    return _reverse_bits_within_bytes(ids.astype(np.uint64)).byteswap()


def source_order(src) -> np.ndarray:
    """Stable permutation putting ``src`` into canonical source order."""
    return np.argsort(bit_reversed(src), kind="stable")


def fits_packed_key(dst, src):
    """True when dst and the reversed src pack losslessly into one uint64."""
    if len(dst) == 0:
        return True
    return int(dst.max()) < _KEY_LIMIT and int(src.max()) < _KEY_LIMIT \
        and int(dst.min()) >= 0 and int(src.min()) >= 0


_KEY_LIMIT = 1 << 32


def packed_key(dst, src):
    # ids below 2**32 reverse into the high half, so shifting keeps the order
    return (dst.astype(np.uint64) << np.uint64(32)) | (bit_reversed(src) >> np.uint64(32))


# -- batches -----------------------------------------------------------------------


@dataclass
class MessageBatch:
    """Columnar messages: destination, source and a ``(n, width)`` payload.

    The canonical order is by destination, then by source in bit-reversed id
    order.  With ``hash_partition(v, P) = v mod P`` and ``P`` a power of two,
    the sources of one partition form a contiguous block of that order, so
    runs from different senders can be applied one after another instead of
    being interleaved.
    """

    dst: np.ndarray
    src: np.ndarray
    payload: np.ndarray

    @classmethod
    def empty(cls, width, dtype):
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, width), dtype))

    def __len__(self):
        return len(self.dst)

    @property
    def record_size(self):
        return 16 + 8 * self.payload.shape[1]

    @property
    def nbytes(self):
        """Body bytes, excluding the block header."""
        return len(self) * self.record_size

    def take(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return MessageBatch(np.take(self.dst, index), np.take(self.src, index),
                            np.take(self.payload, index, axis=0))

    def sort_order(self, runs=False):
        """Permutation into canonical order.

        ``runs`` hints that the batch is a concatenation of sorted runs, which
        a stable sort merges in near-linear time.
        """
        if fits_packed_key(self.dst, self.src):
            return np.argsort(packed_key(self.dst, self.src), kind="stable" if runs else "quicksort")
        return np.lexsort((bit_reversed(self.src), self.dst))

    def sorted(self, runs=False):
        """This batch in canonical order."""
        if len(self) < 2 or self.is_sorted():
            return self
        return self.take(self.sort_order(runs))

    def is_sorted(self):
        if len(self) < 2:
            return True
        d = self.dst
        if not np.all(d[1:] >= d[:-1]):
            return False
        r = bit_reversed(self.src)
        return bool(np.all((d[1:] > d[:-1]) | (r[1:] >= r[:-1])))

    @staticmethod
    def concat(batches, width, dtype):
        batches = [b for b in batches if len(b)]
        if not batches:
            return MessageBatch.empty(width, dtype)
        if len(batches) == 1:
            return batches[0]
        return MessageBatch(
            np.concatenate([b.dst for b in batches]),
            np.concatenate([b.src for b in batches]),
            np.concatenate([b.payload for b in batches]),
        )

    def encode(self) -> bytes:
        width = self.payload.shape[1]
        dt = np.dtype([("dst", "<i8"), ("src", "<i8"), ("payload", self.payload.dtype.newbyteorder("<"), (width,))])
        rec = np.empty(len(self), dtype=dt)
        rec["dst"] = self.dst
        rec["src"] = self.src
        rec["payload"] = self.payload
        head = HEADER.pack(MSG_MAGIC, VERSION, 0, _dtype_code(self.payload.dtype), width, len(self), 0)
        return head + rec.tobytes()


@dataclass
class VertexBatch:
    """Columnar vertex records; either half (state / adjacency) may be absent."""

    ids: np.ndarray
    flags: np.ndarray | None = None
    values: np.ndarray | None = None
    indptr: np.ndarray | None = None
    targets: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    @property
    def has_state(self):
        return self.values is not None

    @property
    def has_adjacency(self):
        return self.indptr is not None

    @property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def structure_nbytes(self):
        return adjacency_nbytes(self.degrees) if self.has_adjacency else 0

    def state_half(self):
        return VertexBatch(self.ids, self.flags, self.values)

    def structure_half(self):
        return VertexBatch(self.ids, indptr=self.indptr, targets=self.targets, weights=self.weights)

    def with_state(self, flags, values):
        return VertexBatch(self.ids, flags, values, self.indptr, self.targets, self.weights)

    def take(self, index):
        """Select rows by integer index or boolean mask, keeping adjacency aligned."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        out = VertexBatch(self.ids[index])
        if self.has_state:
            out.flags = self.flags[index]
            out.values = self.values[index]
        if self.has_adjacency:
            deg = self.degrees[index]
            out.indptr = np.zeros(len(index) + 1, dtype=np.int64)
            np.cumsum(deg, out=out.indptr[1:])
            edge_index = _ranges(self.indptr[index], deg)
            out.targets = self.targets[edge_index]
            out.weights = self.weights[edge_index]
        return out

    @staticmethod
    def concat(batches):
        batches = list(batches)
        if len(batches) == 1:
            return batches[0]
        out = VertexBatch(np.concatenate([b.ids for b in batches]))
        if all(b.has_state for b in batches):
            out.flags = np.concatenate([b.flags for b in batches])
            out.values = np.concatenate([b.values for b in batches])
        if all(b.has_adjacency for b in batches):
            deg = np.concatenate([b.degrees for b in batches])
            out.indptr = np.zeros(len(deg) + 1, dtype=np.int64)
            np.cumsum(deg, out=out.indptr[1:])
            out.targets = np.concatenate([b.targets for b in batches])
            out.weights = np.concatenate([b.weights for b in batches])
        return out

    def encode(self) -> bytes:
        sections = 0
        parts = [np.ascontiguousarray(self.ids, dtype="<i8").tobytes()]
        code, width = ord("i"), 0
        if self.has_state:
            sections |= HAS_STATE
            code = _dtype_code(self.values.dtype)
            width = self.values.shape[1]
            parts.append(np.ascontiguousarray(self.flags, dtype=np.uint8).tobytes())
            parts.append(np.ascontiguousarray(self.values, dtype=_DTYPES[code]).tobytes())
        aux = 0
        if self.has_adjacency:
            sections |= HAS_ADJ
            deg = encode_varints(self.degrees)
            aux = len(deg)
            parts.append(deg)
            parts.append(np.ascontiguousarray(self.targets, dtype="<i8").tobytes())
            parts.append(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        head = HEADER.pack(VTX_MAGIC, VERSION, sections, code, width, len(self.ids), aux)
        return head + b"".join(parts)


def _ranges(starts, lengths):
    """Concatenation of ``arange(s, s + l)`` for each pair, vectorized."""
    lengths = np.asarray(lengths, dtype=np.int64)
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.repeat(np.asarray(starts, dtype=np.int64) - np.cumsum(lengths) + lengths, lengths)
    return offsets + np.arange(total, dtype=np.int64)


expand_ranges = _ranges


def decode_blocks(buf) -> list:
    """Decode every block in ``buf`` into MessageBatch / VertexBatch objects."""
    try:
        return _decode_blocks(buf)
    except ValueError as exc:
        raise DfsError(f"corrupt block: {exc}") from exc


def _decode_blocks(buf):
    view = memoryview(buf)
    pos, out = 0, []
    while pos < len(view):
        if len(view) - pos < HEADER.size:
            raise DfsError("truncated block header")
        magic, version, sections, code, width, count, aux = HEADER.unpack_from(view, pos)
        pos += HEADER.size
        if version != VERSION or code not in _DTYPES:
            raise DfsError(f"unsupported block (version {version}, dtype {code})")
        dtype = _DTYPES[code]
        if magic == MSG_MAGIC:
            dt = np.dtype([("dst", "<i8"), ("src", "<i8"), ("payload", dtype, (width,))])
            size = count * dt.itemsize
            rec = np.frombuffer(view[pos:pos + size], dtype=dt, count=count)
            pos += size
            out.append(MessageBatch(rec["dst"].copy(), rec["src"].copy(),
                                    rec["payload"].reshape(count, width).copy()))
        elif magic == VTX_MAGIC:
            ids = np.frombuffer(view[pos:pos + 8 * count], dtype="<i8", count=count).astype(np.int64)
            pos += 8 * count
            batch = VertexBatch(ids)
            if sections & HAS_STATE:
                batch.flags = np.frombuffer(view[pos:pos + count], dtype=np.uint8, count=count).copy()
                pos += count
                size = 8 * width * count
                batch.values = np.frombuffer(view[pos:pos + size], dtype=dtype, count=width * count).reshape(count, width).copy()
                pos += size
            if sections & HAS_ADJ:
                deg = decode_varints(view[pos:pos + aux], count)
                pos += aux
                edges = int(deg.sum())
                batch.indptr = np.zeros(count + 1, dtype=np.int64)
                np.cumsum(deg, out=batch.indptr[1:])
                batch.targets = np.frombuffer(view[pos:pos + 8 * edges], dtype="<i8", count=edges).astype(np.int64)
                pos += 8 * edges
                batch.weights = np.frombuffer(view[pos:pos + 8 * edges], dtype="<f8", count=edges).astype(np.float64)
                pos += 8 * edges
            out.append(batch)
        else:
            raise DfsError(f"unknown block magic {bytes(magic)!r}")
        if pos > len(view):
            raise DfsError("truncated block body")
    return out
