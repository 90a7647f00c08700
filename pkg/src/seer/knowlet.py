"""Anonymized handover events and their line-oriented wire format.

Device MACs are replaced by an HMAC-SHA256 pseudonym whose key is re-derived
for every simulation day, so the same device cannot be linked across days.
"""

from __future__ import annotations

import hashlib
import hmac
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .citysim import DAY, NULL_SENTINEL, RawEvent
from .errors import DecodeError, EmptyKey

ID_HEX_CHARS = 32
WIRE_KEYS = ("id", "from", "to", "ts")


def keyed_hash(key: bytes, message: bytes) -> bytes:
    """The single keyed hash used for salts and pseudonyms (HMAC-SHA256)."""
    return hmac.new(key, message, hashlib.sha256).digest()


@dataclass(frozen=True)
class HandoverEvent:
    id: str
    frm: str
    to: str
    timestamp: int

    def is_valid(self) -> bool:
        return (
            all(isinstance(v, str) and v for v in (self.id, self.frm, self.to))
            and isinstance(self.timestamp, int)
            and not isinstance(self.timestamp, bool)
            and self.frm != self.to
            and not (self.frm == NULL_SENTINEL and self.to == NULL_SENTINEL)
        )


@dataclass(frozen=True)
class Salt:
    day_index: int
    key_material: bytes


def salt_for_day(master_key: bytes, day_index: int) -> Salt:
    if not master_key:
        raise EmptyKey("master key must not be empty")
    if day_index < 0:
        raise ValueError("day index must be non-negative")
    return Salt(day_index, keyed_hash(master_key, day_index.to_bytes(8, "big")))


def anonymize(mac: str, salt: Salt) -> str:
    if not mac:
        raise ValueError("mac must not be empty")
    return keyed_hash(salt.key_material, mac.encode("utf-8")).hex()[:ID_HEX_CHARS]


def anonymize_stream(
    raw: Iterable[RawEvent],
    master_key: bytes,
    drops: Counter | None = None,
) -> Iterator[HandoverEvent]:
    """Pseudonymize a chronological raw stream.

    Malformed raw events are skipped and tallied under ``drops["malformed"]``.
    """
    if not master_key:
        raise EmptyKey("master key must not be empty")
    salts: dict[int, Salt] = {}
    for ev in raw:
        if not ev.is_valid() or NULL_SENTINEL in (ev.frm, ev.to):
            if drops is not None:
                drops["malformed"] += 1
            continue
        day = ev.timestamp // DAY
        salt = salts.get(day)
        if salt is None:
            salt = salts[day] = salt_for_day(master_key, day)
        yield HandoverEvent(
            anonymize(ev.mac, salt),
            NULL_SENTINEL if ev.frm is None else ev.frm,
            NULL_SENTINEL if ev.to is None else ev.to,
            ev.timestamp,
        )


def encode_event(e: HandoverEvent) -> bytes:
    if not e.is_valid():
        raise ValueError(f"refusing to encode invalid event {e!r}")
    body = json.dumps(
        {"id": e.id, "from": e.frm, "to": e.to, "ts": e.timestamp},
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return body.encode("utf-8") + b"\n"


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def decode_event(line: bytes | str, lineno: int | None = None) -> HandoverEvent:
    """Inverse of :func:`encode_event`. Raises ``DecodeError`` with a byte offset."""
    if isinstance(line, bytes):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid UTF-8", exc.start, lineno) from None
    else:
        text = line
    if text.endswith("\n"):
        text = text[:-1]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(exc.msg, _byte_offset(text, exc.pos), lineno) from None
    end = len(text.encode("utf-8"))
    if not isinstance(obj, dict):
        raise DecodeError("expected a JSON object", 0, lineno)
    for key in WIRE_KEYS:
        if key not in obj:
            raise DecodeError(f"missing key {key!r}", end, lineno)
    if tuple(obj) != WIRE_KEYS:
        raise DecodeError(f"keys must be exactly {list(WIRE_KEYS)} in order", 0, lineno)
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise DecodeError("'ts' must be an integer", text.find('"ts"'), lineno)
    for key in ("id", "from", "to"):
        if not isinstance(obj[key], str) or not obj[key]:
            raise DecodeError(f"{key!r} must be a non-empty string", text.find(f'"{key}"'), lineno)
    event = HandoverEvent(obj["id"], obj["from"], obj["to"], ts)
    if not event.is_valid():
        raise DecodeError("from/to violate the handover rules", 0, lineno)
    return event


def write_events(events: Iterable[HandoverEvent], path: str | Path) -> int:
    n = 0
    with open(path, "wb") as fh:
        for e in events:
            fh.write(encode_event(e))
            n += 1
    return n


def iter_events(path: str | Path) -> Iterator[HandoverEvent]:
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield decode_event(line, lineno)


def read_events(path: str | Path) -> list[HandoverEvent]:
    return list(iter_events(path))
