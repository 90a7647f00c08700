"""Turn a handover event stream into multi-order Markov counts.

Per device, events are grouped into sessions (consecutive gaps below
``t_gap``), leave/re-join pairs are collapsed into direct transitions, the
join and leave at the session edges are dropped, and each remaining
transition is expanded into one record per chain order 1..N.

Two drivers produce identical models: :func:`analyze` (one shot over a full
trace) and :class:`StreamProcessor` (incremental, fed by :func:`micro_batch`).
"""

from __future__ import annotations

import heapq
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, NamedTuple, Sequence

from .citysim import NULL_SENTINEL, START_SENTINEL
from .errors import OrderOutOfRange, OutOfOrderError
from .knowlet import HandoverEvent
from .knowstore import KnowStore, MarkovModel

log = logging.getLogger(__name__)

NULL = NULL_SENTINEL
START = START_SENTINEL


class Transition(NamedTuple):
    frm: str
    to: str
    ts: int


@dataclass
class Session:
    device_id: str | None
    transitions: list[Transition]
    closed: bool = True


@dataclass(frozen=True)
class TransitionRecord:
    order: int
    history: tuple[str, ...]
    frm: str
    to: str
    timestamp: int

    @property
    def state(self) -> tuple[str, ...]:
        return self.history + (self.frm,)


@dataclass(frozen=True)
class PipelineConfig:
    t_gap: int = 300
    max_order: int = 3
    batch_interval: int = 1

    def __post_init__(self) -> None:
        if self.t_gap <= 0 or self.max_order < 1 or self.batch_interval <= 0:
            raise ValueError(f"pipeline parameters must be positive: {self}")


@dataclass
class Batch:
    start: int
    end: int
    events: list[HandoverEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


def micro_batch(
    stream: Iterable[HandoverEvent],
    batch_interval: int = 1,
    late: str = "raise",
    drops: Counter | None = None,
) -> Iterator[Batch]:
    """Group a time-ordered stream into fixed ``[k*i, (k+1)*i)`` windows.

    Windows are emitted from the first event's window through the last one,
    empty windows included.  An event older than the open window raises
    ``OutOfOrderError`` when ``late="raise"``; with ``late="drop"`` it is
    discarded and counted in ``drops["late"]``.
    """
    if batch_interval <= 0:
        raise ValueError("batch interval must be positive")
    if late not in ("raise", "drop"):
        raise ValueError("late must be 'raise' or 'drop'")
    current: Batch | None = None
    for ev in stream:
        k = ev.timestamp // batch_interval
        if current is None:
            current = Batch(k * batch_interval, (k + 1) * batch_interval)
        if ev.timestamp < current.start:
            if late == "raise":
                raise OutOfOrderError(f"event at {ev.timestamp} arrived after window {current.start} opened")
            if drops is not None:
                drops["late"] += 1
            continue
        while ev.timestamp >= current.end:
            yield current
            current = Batch(current.end, current.end + batch_interval)
        current.events.append(ev)
    if current is not None:
        yield current


def sessionize(events: Sequence[HandoverEvent], t_gap: int) -> list[Session]:
    """Split one device's ordered events wherever the gap reaches ``t_gap``."""
    sessions: list[Session] = []
    last_ts = None
    for ev in events:
        if last_ts is None or ev.timestamp - last_ts >= t_gap:
            sessions.append(Session(ev.id, []))
        sessions[-1].transitions.append(Transition(ev.frm, ev.to, ev.timestamp))
        last_ts = ev.timestamp
    return sessions


def collapse_trivial(session: Session) -> Session:
    """Fold leave/re-join pairs into direct hops and drop the session edges.

    ``(X, null, t1), (null, Y, t2)`` becomes ``(X, Y, t2)``, or disappears
    when ``X == Y``.  The rewrite pairs never overlap, so one stack pass
    reaches the same fixpoint as repeated rewriting.
    """
    stack: list[Transition] = []
    for tr in session.transitions:
        if tr.frm == NULL and stack and stack[-1].to == NULL:
            left = stack.pop()
            if left.frm != tr.to:
                stack.append(Transition(left.frm, tr.to, tr.ts))
        else:
            stack.append(tr)
    # whatever still touches null is a boundary join/leave
    kept = [t for t in stack if t.frm != NULL and t.to != NULL]
    return replace(session, transitions=kept)


def filter_transient(sessions: Iterable[Session]) -> list[Session]:
    """Drop sessions with nothing left to model and forget the device id."""
    return [replace(s, device_id=None) for s in sessions if s.transitions]


def expand_orders(session: Session, max_order: int) -> list[TransitionRecord]:
    if max_order < 1:
        raise OrderOutOfRange("max_order must be >= 1")
    froms = [t.frm for t in session.transitions]
    pad = [START] * (max_order - 1)
    padded = pad + froms
    records = []
    for j, tr in enumerate(session.transitions):
        pos = j + len(pad)
        for k in range(1, max_order + 1):
            history = tuple(padded[pos - k + 1 : pos])
            records.append(TransitionRecord(k, history, tr.frm, tr.to, tr.ts))
    return records


def update_model(model: MarkovModel, records: Iterable[TransitionRecord]) -> MarkovModel:
    """Add one count per record.  Validates the whole batch before touching the model."""
    records = list(records)
    for r in records:
        if not 1 <= r.order <= model.max_order:
            raise OrderOutOfRange(f"record order {r.order} outside 1..{model.max_order}")
    tables = model.tables
    for r in records:
        dests = tables[r.order].setdefault(r.history + (r.frm,), {})
        dests[r.to] = dests.get(r.to, 0) + 1
    return model


def session_records(sessions: Iterable[Session], max_order: int) -> list[TransitionRecord]:
    collapsed = filter_transient(collapse_trivial(s) for s in sessions)
    records: list[TransitionRecord] = []
    for s in collapsed:
        records.extend(expand_orders(s, max_order))
    return records


def group_by_device(events: Iterable[HandoverEvent]) -> dict[str, list[HandoverEvent]]:
    per_device: dict[str, list[HandoverEvent]] = defaultdict(list)
    for ev in events:
        per_device[ev.id].append(ev)
    return per_device


def trace_records(events: Iterable[HandoverEvent], config: PipelineConfig) -> list[TransitionRecord]:
    records: list[TransitionRecord] = []
    for device_events in group_by_device(events).values():
        records.extend(session_records(sessionize(device_events, config.t_gap), config.max_order))
    return records


def analyze(events: Iterable[HandoverEvent], config: PipelineConfig = PipelineConfig()) -> MarkovModel:
    """Single-pass batch build of the model over a complete trace."""
    return update_model(MarkovModel(config.max_order), trace_records(events, config))


class StreamProcessor:
    """Incremental sessionizer feeding a :class:`KnowStore` one batch at a time.

    A device's open session is closed either when its next event arrives
    ``t_gap`` or more after the previous one, or when the watermark (largest
    timestamp seen) moves past ``last event + t_gap``.
    """

    def __init__(self, config: PipelineConfig, store: KnowStore | None = None) -> None:
        self.config = config
        self.store = store or KnowStore(MarkovModel(config.max_order))
        if self.store.max_order != config.max_order:
            raise ValueError("store order does not match pipeline config")
        self.open: dict[str, Session] = {}
        self.last_seen: dict[str, int] = {}
        self._deadlines: list[tuple[int, str]] = []
        self.watermark: int | None = None
        self.closed_start: int | None = None
        self.drops: Counter = Counter()
        self.records_emitted = 0
        self.batches = 0

    def _close(self, device: str, out: list[Session]) -> None:
        session = self.open.pop(device)
        session.closed = True
        out.append(session)
        del self.last_seen[device]

    def process(self, batch: Batch) -> int:
        """Ingest one batch atomically; returns the number of records applied."""
        t_gap = self.config.t_gap
        finished: list[Session] = []
        for ev in batch.events:
            if self.closed_start is not None and ev.timestamp < self.closed_start:
                self.drops["late"] += 1
                continue
            last = self.last_seen.get(ev.id)
            if last is not None and ev.timestamp - last >= t_gap:
                self._close(ev.id, finished)
                last = None
            if last is None:
                self.open[ev.id] = Session(ev.id, [], closed=False)
            self.open[ev.id].transitions.append(Transition(ev.frm, ev.to, ev.timestamp))
            self.last_seen[ev.id] = ev.timestamp
            heapq.heappush(self._deadlines, (ev.timestamp + t_gap, ev.id))
            if self.watermark is None or ev.timestamp > self.watermark:
                self.watermark = ev.timestamp
        if self.watermark is not None:
            while self._deadlines and self._deadlines[0][0] < self.watermark:
                deadline, device = heapq.heappop(self._deadlines)
                last = self.last_seen.get(device)
                # stale heap entries belong to events that were superseded
                if last is not None and last + t_gap == deadline:
                    self._close(device, finished)
        self.closed_start = batch.end
        self.batches += 1
        return self._emit(finished)

    def flush(self) -> int:
        """Close every open session (end of stream)."""
        finished: list[Session] = []
        for device in list(self.open):
            self._close(device, finished)
        self._deadlines.clear()
        return self._emit(finished)

    def _emit(self, sessions: list[Session]) -> int:
        if not sessions:
            return 0
        records = session_records(sessions, self.config.max_order)
        self.store.apply(records)
        self.records_emitted += len(records)
        return len(records)


def analyze_stream(
    events: Iterable[HandoverEvent],
    config: PipelineConfig = PipelineConfig(),
    store: KnowStore | None = None,
) -> MarkovModel:
    """Micro-batched build; late events are dropped and counted, never reordered."""
    proc = StreamProcessor(config, store)
    drops: Counter = Counter()
    for batch in micro_batch(events, config.batch_interval, late="drop", drops=drops):
        proc.process(batch)
    proc.flush()
    proc.drops.update(drops)
    if proc.drops:
        log.warning("dropped events: %s", dict(proc.drops))
    return proc.store.snapshot()
