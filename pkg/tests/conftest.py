from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from seer import citysim, knowlet
from seer.knowlet import HandoverEvent

DATA = Path(__file__).parent / "data"
MASTER_KEY = b"test-master-key"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def ev(dev: str, frm: str, to: str, ts: int) -> HandoverEvent:
    return HandoverEvent(dev, frm, to, ts)


@pytest.fixture(scope="session")
def desk_events() -> list[HandoverEvent]:
    events = knowlet.read_events(DATA / "desk_trace.jsonl")
    return sorted(events, key=lambda e: (e.timestamp, e.id))


@pytest.fixture(scope="session")
def city() -> citysim.City:
    return citysim.generate_city(7)


@pytest.fixture(scope="session")
def week_raw(city) -> list[citysim.RawEvent]:
    """100 citizens, one week, the acceptance-scale trace."""
    rng = np.random.default_rng(11)
    bounds = citysim.city_bounds(city.pois, city.aps)
    people = citysim.generate_citizens(100, city.pois, citysim.DEFAULT_BANDWIDTH, rng, bounds=bounds)
    return citysim.simulate(people, city.aps, 0, citysim.WEEK, rng, city.pois)


@pytest.fixture(scope="session")
def week_events(week_raw) -> list[HandoverEvent]:
    return list(knowlet.anonymize_stream(week_raw, MASTER_KEY))


@pytest.fixture(scope="session")
def city_files(tmp_path_factory, city) -> tuple[Path, Path]:
    d = tmp_path_factory.mktemp("city")
    citysim.write_pois(city.pois, d / "pois.jsonl")
    citysim.write_aps(city.aps, d / "aps.jsonl")
    return d / "pois.jsonl", d / "aps.jsonl"


def cycle_trace(t0: int, devices: int = 20, laps: int = 5, dwell: int = 60) -> list[HandoverEvent]:
    """Devices looping A B C A C B ...: the next AP is fixed by the previous two,
    while every single AP is followed by each of two successors equally often."""
    cycle = ["A", "B", "C", "A", "C", "B"]
    events = []
    for d in range(devices):
        dev = f"dev{d:02d}"
        t = t0 + d * 10_000
        events.append(ev(dev, "null", "A", t))
        cur = "A"
        for i in range(1, laps * len(cycle) + 1):
            t += dwell
            nxt = cycle[i % len(cycle)]
            events.append(ev(dev, cur, nxt, t))
            cur = nxt
        events.append(ev(dev, cur, "null", t + dwell))
    return sorted(events, key=lambda e: (e.timestamp, e.id))
