"""Multi-order Markov count tables (the mobility knowledge) and their store.

A :class:`MarkovModel` keeps, for each chain order ``k``, a map from a
``k``-tuple state (history followed by the current AP) to destination counts.
Models add elementwise, so shards built anywhere can be merged in any order.
"""

from __future__ import annotations

import copy
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import CorruptSnapshot, OrderMismatch, OrderOutOfRange, StateArityMismatch

State = tuple[str, ...]
Table = dict[State, dict[str, int]]

MAGIC = b"SEERKS"
SNAPSHOT_VERSION = 1
_U64_MAX = (1 << 64) - 1


@dataclass
class MarkovModel:
    max_order: int
    tables: dict[int, Table] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_order < 1:
            raise OrderOutOfRange("max_order must be >= 1")
        for k in range(1, self.max_order + 1):
            self.tables.setdefault(k, {})

    def check_order(self, order: int) -> None:
        if not 1 <= order <= self.max_order:
            raise OrderOutOfRange(f"order {order} outside 1..{self.max_order}")

    def add(self, order: int, state: State, to: str, n: int = 1) -> None:
        self.check_order(order)
        if len(state) != order:
            raise StateArityMismatch(f"state {state!r} has arity {len(state)}, expected {order}")
        dests = self.tables[order].setdefault(state, {})
        dests[to] = dests.get(to, 0) + n

    def counts(self, order: int, state: State) -> dict[str, int]:
        return self.tables[order].get(tuple(state), {})

    @property
    def total_records(self) -> int:
        return sum(sum(d.values()) for d in self.tables[1].values())

    def state_counts(self) -> dict[int, int]:
        return {k: len(t) for k, t in self.tables.items()}

    def copy(self) -> "MarkovModel":
        return MarkovModel(self.max_order, copy.deepcopy(self.tables))


@dataclass(frozen=True)
class Distribution:
    state: State
    entries: tuple[tuple[str, float], ...]
    support_count: int


def transition_distribution(model: MarkovModel, order: int, state: Iterable[str]) -> Distribution:
    """Empirical next-AP distribution for ``state``; empty when never observed."""
    state = tuple(state)
    model.check_order(order)
    if len(state) != order:
        raise StateArityMismatch(f"state {state!r} has arity {len(state)}, expected {order}")
    dests = model.counts(order, state)
    total = sum(dests.values())
    if total == 0:
        return Distribution(state, (), 0)
    ranked = sorted(dests.items(), key=lambda kv: (-kv[1], kv[0]))
    return Distribution(state, tuple((to, c / total) for to, c in ranked if c > 0), total)


def merge(a: MarkovModel, b: MarkovModel) -> MarkovModel:
    if a.max_order != b.max_order:
        raise OrderMismatch(f"cannot merge order {a.max_order} with order {b.max_order}")
    out = a.copy()
    for k, table in b.tables.items():
        mine = out.tables[k]
        for state, dests in table.items():
            tgt = mine.setdefault(state, {})
            for to, c in dests.items():
                tgt[to] = tgt.get(to, 0) + c
    return out


def empty_model(max_order: int) -> MarkovModel:
    return MarkovModel(max_order)


# -- snapshot format --------------------------------------------------------
#
# magic "SEERKS" | u8 version | u32 N
# for k in 1..N: u32 n_states
#   per state (sorted): k x (u32 len, utf-8) | u32 n_dest | per dest (sorted): (u32 len, utf-8) u64 count
# u32 crc32 of everything before it.  All integers little-endian.


def _pack_str(out: list[bytes], s: str) -> None:
    raw = s.encode("utf-8")
    out.append(struct.pack("<I", len(raw)))
    out.append(raw)


def dumps(model: MarkovModel) -> bytes:
    out = [MAGIC, struct.pack("<BI", SNAPSHOT_VERSION, model.max_order)]
    for k in range(1, model.max_order + 1):
        table = model.tables[k]
        states = sorted(s for s, d in table.items() if any(d.values()))
        out.append(struct.pack("<I", len(states)))
        for state in states:
            for token in state:
                _pack_str(out, token)
            dests = sorted((to, c) for to, c in table[state].items() if c > 0)
            out.append(struct.pack("<I", len(dests)))
            for to, c in dests:
                if c > _U64_MAX:
                    raise OverflowError(f"count {c} does not fit in 64 bits")
                _pack_str(out, to)
                out.append(struct.pack("<Q", c))
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CorruptSnapshot(f"truncated at byte {self.pos}")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def string(self) -> str:
        (n,) = self.take("<I")
        if self.pos + n > len(self.buf):
            raise CorruptSnapshot(f"truncated string at byte {self.pos}")
        raw = self.buf[self.pos : self.pos + n]
        self.pos += n
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptSnapshot(f"invalid UTF-8 at byte {self.pos - n}") from None


def loads(data: bytes) -> MarkovModel:
    header = len(MAGIC) + 5
    if len(data) < header + 4:
        raise CorruptSnapshot("snapshot too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptSnapshot("checksum mismatch")
    if not body.startswith(MAGIC):
        raise CorruptSnapshot("bad magic")
    r = _Reader(body)
    r.pos = len(MAGIC)
    version, n = r.take("<BI")
    if version != SNAPSHOT_VERSION:
        raise CorruptSnapshot(f"unsupported snapshot version {version}")
    if n < 1:
        raise CorruptSnapshot("order must be >= 1")
    model = MarkovModel(n)
    for k in range(1, n + 1):
        (n_states,) = r.take("<I")
        table = model.tables[k]
        for _ in range(n_states):
            state = tuple(r.string() for _ in range(k))
            (n_dest,) = r.take("<I")
            dests = table.setdefault(state, {})
            for _ in range(n_dest):
                to = r.string()
                (c,) = r.take("<Q")
                dests[to] = c
    if r.pos != len(body):
        raise CorruptSnapshot("trailing bytes after last table")
    return model


def persist(model: MarkovModel, path: str | Path) -> None:
    """Write atomically: readers watching ``path`` never see a half-written file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model))
    os.replace(tmp, path)


def restore(path: str | Path) -> MarkovModel:
    return loads(Path(path).read_bytes())


class KnowStore:
    """Single-writer, many-reader holder of a live model.

    Writers apply whole batches under the lock, so readers only ever see
    fully-applied batches.
    """

    def __init__(self, model: MarkovModel) -> None:
        self._model = model
        self._lock = threading.Lock()

    @property
    def max_order(self) -> int:
        return self._model.max_order

    def apply(self, records) -> None:
        from .pipeline import update_model

        records = list(records)
        with self._lock:
            update_model(self._model, records)

    def merge_in(self, other: MarkovModel) -> None:
        with self._lock:
            self._model = merge(self._model, other)

    def distribution(self, order: int, state: Iterable[str]) -> Distribution:
        with self._lock:
            return transition_distribution(self._model, order, state)

    def snapshot(self) -> MarkovModel:
        with self._lock:
            return self._model.copy()
