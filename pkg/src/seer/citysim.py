"""Synthetic smart-city mobility and Wi-Fi association simulator.

Points of interest (POIs) are turned into a Gaussian kernel mixture that
stands in for the commercial density of the city.  Citizens get personal
locations (home, job, gym, club) drawn from that mixture, follow a weekly
schedule of straight-line walks, and every change of their nearest
in-range access point is emitted as a raw (non-anonymized) event.

Coordinates are planar meters in a local city frame.  Time is integer
seconds since the simulation epoch, which is a Monday at 00:00.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyInput, FormatError

CATEGORIES = ("employer", "food", "health", "recreation")
PERSONAL_PLACES = ("home", "job", "gym", "club")

# Reserved tokens; no access point may use them as its bssid.
NULL_SENTINEL = "null"
START_SENTINEL = "^"

DAY = 86_400
WEEK = 7 * DAY

DEFAULT_BANDWIDTH = 400.0
DEFAULT_CELL_SIZE = 50.0
DEFAULT_SPEED_RANGE = (1.0, 1.6)


@dataclass(frozen=True)
class Poi:
    id: str
    category: str
    x: float
    y: float
    weight: float

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def clamp(self, x, y):
        return np.clip(x, self.xmin, self.xmax), np.clip(y, self.ymin, self.ymax)

    @classmethod
    def around(cls, points: Iterable[tuple[float, float]], margin: float = 0.0) -> "Bounds":
        pts = list(points)
        if not pts:
            raise EmptyInput("cannot derive bounds from zero points")
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return cls(min(xs) - margin, min(ys) - margin, max(xs) + margin, max(ys) + margin)


@dataclass(frozen=True)
class GridSpec:
    """Shape of a density grid: ``nx`` by ``ny`` square cells from ``origin``."""

    origin: tuple[float, float]
    nx: int
    ny: int
    cell_size: float

    @classmethod
    def covering(cls, bounds: Bounds, cell_size: float = DEFAULT_CELL_SIZE) -> "GridSpec":
        nx = max(1, math.ceil((bounds.xmax - bounds.xmin) / cell_size))
        ny = max(1, math.ceil((bounds.ymax - bounds.ymin) / cell_size))
        return cls((bounds.xmin, bounds.ymin), nx, ny, cell_size)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.cell_size
        return xs, ys


@dataclass
class DensityGrid:
    """Normalized density sampled at cell centers; ``values[j, i]`` is row y_j, column x_i."""

    origin: tuple[float, float]
    cell_size: float
    values: np.ndarray

    @property
    def cell_area(self) -> float:
        return self.cell_size * self.cell_size

    def total_mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.values.shape
        return GridSpec(self.origin, nx, ny, self.cell_size).centers()

    def to_csv(self, path: str | Path) -> None:
        """Write one ``x,y,density`` row per cell."""
        xs, ys = self.centers()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "density"])
            for j, y in enumerate(ys):
                for i, x in enumerate(xs):
                    writer.writerow([f"{x:.3f}", f"{y:.3f}", repr(float(self.values[j, i]))])


@dataclass(frozen=True)
class AccessPoint:
    bssid: str
    x: float
    y: float
    radius: float


@dataclass
class Citizen:
    mac: str
    pois: dict[str, tuple[float, float]]
    speed: float


@dataclass(frozen=True)
class RawEvent:
    """A handover as seen by the controller, before anonymization.

    ``frm``/``to`` are bssids, or ``None`` for the outside of the Wi-Fi system.
    """

    mac: str
    frm: str | None
    to: str | None
    timestamp: int

    def is_valid(self) -> bool:
        return (
            isinstance(self.mac, str)
            and bool(self.mac)
            and self.frm != self.to
            and not (self.frm is None and self.to is None)
            and isinstance(self.timestamp, int)
            and self.timestamp >= 0
        )

    def to_json(self) -> str:
        return json.dumps(
            {"mac": self.mac, "from": self.frm, "to": self.to, "ts": self.timestamp},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "RawEvent":
        obj = json.loads(text)
        return cls(obj["mac"], obj["from"], obj["to"], obj["ts"])


# -- file loading ---------------------------------------------------------


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise FormatError("record is not a JSON object", lineno)
            yield lineno, obj


def _number(obj: dict, key: str, lineno: int) -> float:
    if key not in obj:
        raise FormatError(f"missing field {key!r}", lineno)
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"field {key!r} must be a number", lineno)
    return float(value)


def _string(obj: dict, key: str, lineno: int) -> str:
    if key not in obj:
        raise FormatError(f"missing field {key!r}", lineno)
    value = obj[key]
    if not isinstance(value, str) or not value:
        raise FormatError(f"field {key!r} must be a non-empty string", lineno)
    return value


def load_pois(path: str | Path) -> list[Poi]:
    """Read POIs from a JSON-lines file, preserving order.

    Raises ``FormatError`` (with the offending line number) for bad records and
    lets ``OSError`` propagate for unreadable files.
    """
    pois = []
    for lineno, obj in _read_jsonl(path):
        poi_id = _string(obj, "id", lineno)
        category = _string(obj, "category", lineno)
        if category not in CATEGORIES:
            raise FormatError(f"unknown category {category!r}", lineno)
        x = _number(obj, "x", lineno)
        y = _number(obj, "y", lineno)
        weight = _number(obj, "weight", lineno)
        if not weight > 0:
            raise FormatError("weight must be positive", lineno)
        pois.append(Poi(poi_id, category, x, y, weight))
    return pois


def load_aps(path: str | Path) -> list[AccessPoint]:
    aps = []
    seen = set()
    for lineno, obj in _read_jsonl(path):
        bssid = _string(obj, "bssid", lineno)
        if bssid in (NULL_SENTINEL, START_SENTINEL):
            raise FormatError(f"bssid {bssid!r} is reserved", lineno)
        if bssid in seen:
            raise FormatError(f"duplicate bssid {bssid!r}", lineno)
        seen.add(bssid)
        radius = _number(obj, "radius", lineno)
        if not radius > 0:
            raise FormatError("radius must be positive", lineno)
        aps.append(AccessPoint(bssid, _number(obj, "x", lineno), _number(obj, "y", lineno), radius))
    return aps


def write_pois(pois: Iterable[Poi], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pois:
            rec = {"id": p.id, "category": p.category, "x": p.x, "y": p.y, "weight": p.weight}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_aps(aps: Iterable[AccessPoint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ap in aps:
            rec = {"bssid": ap.bssid, "x": ap.x, "y": ap.y, "radius": ap.radius}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_raw_events(events: Iterable[RawEvent], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")
            n += 1
    return n


def read_raw_events(path: str | Path) -> list[RawEvent]:
    events = []
    for lineno, obj in _read_jsonl(path):
        try:
            events.append(RawEvent(obj["mac"], obj["from"], obj["to"], obj["ts"]))
        except KeyError as exc:
            raise FormatError(f"missing field {exc.args[0]!r}", lineno) from None
    return events


# -- density --------------------------------------------------------------


def build_density(pois: Sequence[Poi], bandwidth: float, grid: GridSpec) -> DensityGrid:
    """Evaluate the weighted isotropic Gaussian mixture on ``grid`` and normalize it."""
    if not pois:
        raise EmptyInput("density needs at least one POI")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    xs, ys = grid.centers()
    values = np.zeros((grid.ny, grid.nx))
    inv = 1.0 / (2.0 * bandwidth * bandwidth)
    for p in pois:
        gx = np.exp(-((xs - p.x) ** 2) * inv)
        gy = np.exp(-((ys - p.y) ** 2) * inv)
        values += p.weight * np.outer(gy, gx)
    total = values.sum() * grid.cell_size * grid.cell_size
    if total <= 0:
        raise EmptyInput("all POIs are too far from the grid to contribute any density")
    return DensityGrid(grid.origin, grid.cell_size, values / total)


def sample_points(
    pois: Sequence[Poi],
    bandwidth: float,
    rng: np.random.Generator,
    n: int,
    bounds: Bounds | None = None,
) -> np.ndarray:
    """Draw ``n`` points from the kernel mixture; returns an ``(n, 2)`` array."""
    if not pois:
        raise EmptyInput("cannot sample from zero POIs")
    weights = np.array([p.weight for p in pois], dtype=float)
    idx = rng.choice(len(pois), size=n, p=weights / weights.sum())
    centers = np.array([p.position for p in pois], dtype=float)[idx]
    pts = centers + rng.normal(0.0, bandwidth, size=(n, 2))
    if bounds is not None:
        pts[:, 0], pts[:, 1] = bounds.clamp(pts[:, 0], pts[:, 1])
    return pts


def sample_point(
    pois: Sequence[Poi],
    bandwidth: float,
    rng: np.random.Generator,
    bounds: Bounds | None = None,
) -> tuple[float, float]:
    x, y = sample_points(pois, bandwidth, rng, 1, bounds)[0]
    return (float(x), float(y))


def _random_mac(rng: np.random.Generator) -> str:
    raw = int(rng.integers(0, 1 << 48))
    # locally administered, unicast
    raw = (raw & ~(0x01 << 40)) | (0x02 << 40)
    return ":".join(f"{(raw >> s) & 0xFF:02x}" for s in range(40, -8, -8))


def generate_citizens(
    n: int,
    pois: Sequence[Poi],
    bandwidth: float,
    rng: np.random.Generator,
    speed_range: tuple[float, float] = DEFAULT_SPEED_RANGE,
    bounds: Bounds | None = None,
) -> list[Citizen]:
    if n < 0:
        raise ValueError("citizen count must be non-negative")
    lo, hi = speed_range
    if not 0 < lo <= hi:
        raise ValueError("speed range must be positive and ordered")
    citizens = []
    macs: set[str] = set()
    for _ in range(n):
        mac = _random_mac(rng)
        while mac in macs:
            mac = _random_mac(rng)
        macs.add(mac)
        places = {name: sample_point(pois, bandwidth, rng, bounds) for name in PERSONAL_PLACES}
        speed = float(rng.uniform(lo, hi))
        citizens.append(Citizen(mac, places, speed))
    return citizens


# -- association ----------------------------------------------------------


def nearest_ap(position: tuple[float, float], aps: Sequence[AccessPoint]) -> str | None:
    """Closest in-range AP, lexicographically smallest bssid on exact ties."""
    x, y = position
    best = None
    best_d2 = math.inf
    for ap in aps:
        dx = x - ap.x
        dy = y - ap.y
        d2 = dx * dx + dy * dy
        if d2 > ap.radius * ap.radius:
            continue
        if d2 < best_d2 or (d2 == best_d2 and ap.bssid < best):
            best, best_d2 = ap.bssid, d2
    return best


class ApIndex:
    """Vectorized form of :func:`nearest_ap` over a fixed deployment."""

    def __init__(self, aps: Sequence[AccessPoint]) -> None:
        if not aps:
            raise ConfigError("no access points configured")
        ordered = sorted(aps, key=lambda a: a.bssid)
        self.bssids = [a.bssid for a in ordered]
        if len(set(self.bssids)) != len(self.bssids):
            raise ConfigError("duplicate bssid in deployment")
        for b in self.bssids:
            if b in (NULL_SENTINEL, START_SENTINEL):
                raise ConfigError(f"bssid {b!r} is reserved")
        self.x = np.array([a.x for a in ordered])
        self.y = np.array([a.y for a in ordered])
        self.radius = np.array([a.radius for a in ordered])
        self.r2 = self.radius * self.radius

    def near_segment(self, p0, p1) -> np.ndarray:
        """Indices (in bssid order) of APs whose disc touches the segment p0-p1."""
        ax, ay = p0
        dx, dy = p1[0] - ax, p1[1] - ay
        seg2 = dx * dx + dy * dy
        if seg2 == 0:
            t = np.zeros_like(self.x)
        else:
            t = np.clip(((self.x - ax) * dx + (self.y - ay) * dy) / seg2, 0.0, 1.0)
        cx = ax + t * dx - self.x
        cy = ay + t * dy - self.y
        # small slack so float error in the projection never drops a candidate
        return np.flatnonzero(cx * cx + cy * cy <= self.r2 * (1 + 1e-9) + 1e-6)

    def nearest_many(self, px: np.ndarray, py: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """Index into ``bssids`` per position, or -1 when nothing is in range."""
        if candidates.size == 0:
            return np.full(px.shape, -1, dtype=np.int64)
        dx = px[:, None] - self.x[candidates][None, :]
        dy = py[:, None] - self.y[candidates][None, :]
        d2 = dx * dx + dy * dy
        d2 = np.where(d2 <= self.r2[candidates][None, :], d2, np.inf)
        best = np.argmin(d2, axis=1)
        found = np.isfinite(d2[np.arange(len(px)), best])
        return np.where(found, candidates[best], -1)


# -- schedule and movement ------------------------------------------------


@dataclass(frozen=True)
class Leg:
    """Walk to ``dest`` starting no earlier than ``depart``."""

    depart: int
    dest: tuple[float, float]


def _weighted_pick(pois: Sequence[Poi], rng: np.random.Generator) -> Poi:
    w = np.array([p.weight for p in pois], dtype=float)
    return pois[int(rng.choice(len(pois), p=w / w.sum()))]


def _closest(pois: Sequence[Poi], where: tuple[float, float]) -> Poi:
    return min(pois, key=lambda p: ((p.x - where[0]) ** 2 + (p.y - where[1]) ** 2, p.id))


def weekly_itinerary(
    citizen: Citizen,
    pois: Sequence[Poi],
    first_day: int,
    n_days: int,
    rng: np.random.Generator,
) -> list[Leg]:
    """Legs for days ``first_day .. first_day + n_days - 1`` (absolute day indices).

    Weekdays: commute to the job between 07:00 and 09:30, an optional lunch
    trip to the food spot closest to the job, and an evening that either goes
    straight home or passes through the gym or club first.  Weekends: one
    outing to a recreation POI picked per day.
    """
    food = [p for p in pois if p.category == "food"]
    leisure = [p for p in pois if p.category == "recreation"]
    places = citizen.pois
    lunch_spot = _closest(food, places["job"]).position if food else None
    legs: list[Leg] = []
    for day in range(first_day, first_day + n_days):
        base = day * DAY
        if day % 7 < 5:
            leave_home = base + int(rng.integers(7 * 3600, 9 * 3600 + 1800 + 1))
            legs.append(Leg(leave_home, places["job"]))
            if lunch_spot is not None and rng.random() < 0.5:
                out = base + 12 * 3600 + int(rng.integers(0, 1800 + 1))
                legs.append(Leg(out, lunch_spot))
                legs.append(Leg(out + 2700, places["job"]))
            leave_job = leave_home + 9 * 3600 + int(rng.integers(-1800, 1800 + 1))
            if rng.random() < 0.4:
                spot = places["gym"] if rng.random() < 0.5 else places["club"]
                legs.append(Leg(leave_job, spot))
                legs.append(Leg(leave_job + 5400, places["home"]))
            else:
                legs.append(Leg(leave_job, places["home"]))
        elif leisure:
            out = base + int(rng.integers(10 * 3600, 14 * 3600 + 1))
            target = _weighted_pick(leisure, rng)
            legs.append(Leg(out, target.position))
            legs.append(Leg(out + int(rng.integers(3600, 3 * 3600 + 1)), places["home"]))
    return legs


def track(
    mac: str,
    start_pos: tuple[float, float],
    legs: Sequence[Leg],
    speed: float,
    index: ApIndex,
    start: int,
    end: int,
) -> list[RawEvent]:
    """Walk ``legs`` on a 1 s tick over ``[start, end)`` and emit association changes."""
    events: list[RawEvent] = []
    pos = (float(start_pos[0]), float(start_pos[1]))
    cand = index.near_segment(pos, pos)
    cur = int(index.nearest_many(np.array([pos[0]]), np.array([pos[1]]), cand)[0])
    if cur >= 0:
        events.append(RawEvent(mac, None, index.bssids[cur], start))
    t = start
    for leg in legs:
        if leg.depart < start:
            continue
        depart = max(leg.depart, t)
        if depart >= end - 1:
            break
        dx = leg.dest[0] - pos[0]
        dy = leg.dest[1] - pos[1]
        dist = math.hypot(dx, dy)
        if dist == 0:
            continue
        travel = dist / speed
        arrival = depart + math.ceil(travel)
        last = min(arrival, end - 1)
        ticks = np.arange(depart + 1, last + 1)
        frac = np.minimum((ticks - depart) / travel, 1.0)
        px = pos[0] + frac * dx
        py = pos[1] + frac * dy
        cand = index.near_segment(pos, leg.dest)
        assoc = index.nearest_many(px, py, cand)
        prev = np.concatenate(([cur], assoc[:-1]))
        for k in np.flatnonzero(assoc != prev):
            old, new = int(prev[k]), int(assoc[k])
            events.append(
                RawEvent(
                    mac,
                    index.bssids[old] if old >= 0 else None,
                    index.bssids[new] if new >= 0 else None,
                    int(ticks[k]),
                )
            )
        if assoc.size:
            cur = int(assoc[-1])
        if arrival > last:
            pos = (float(px[-1]), float(py[-1]))
            break
        pos = (float(leg.dest[0]), float(leg.dest[1]))
        t = arrival
    return events


def simulate(
    citizens: Sequence[Citizen],
    aps: Sequence[AccessPoint],
    start_epoch: int,
    duration_seconds: int,
    rng: np.random.Generator,
    pois: Sequence[Poi] = (),
) -> list[RawEvent]:
    """Simulate every citizen over ``[start_epoch, start_epoch + duration)``.

    Citizens start at home.  ``pois`` supplies lunch and weekend destinations;
    without them citizens only commute and visit their personal places.
    Output is sorted by (timestamp, mac).
    """
    if duration_seconds <= 0:
        raise ValueError("duration must be positive")
    index = ApIndex(aps)
    end = start_epoch + duration_seconds
    first_day = start_epoch // DAY
    n_days = (end - 1) // DAY - first_day + 1
    events: list[RawEvent] = []
    for c in citizens:
        legs = weekly_itinerary(c, pois, first_day, n_days, rng)
        events.extend(track(c.mac, c.pois["home"], legs, c.speed, index, start_epoch, end))
    events.sort(key=lambda e: (e.timestamp, e.mac))
    return events


# -- synthetic city -------------------------------------------------------


@dataclass
class City:
    pois: list[Poi]
    aps: list[AccessPoint]
    bounds: Bounds = field(default_factory=lambda: Bounds(0.0, 0.0, 6000.0, 6000.0))


def generate_city(
    seed: int,
    size: float = 6000.0,
    n_hubs: int = 5,
    n_aps: int = 220,
    counts: dict[str, int] | None = None,
    bandwidth: float = DEFAULT_BANDWIDTH,
) -> City:
    """Build a POI set clustered around commercial hubs plus an AP deployment
    that follows the same density (campus-style coverage)."""
    rng = np.random.default_rng(seed)
    counts = counts or {"employer": 25, "food": 60, "health": 20, "recreation": 40}
    bounds = Bounds(0.0, 0.0, size, size)
    margin = 0.15 * size
    hubs = rng.uniform(margin, size - margin, size=(n_hubs, 2))
    pois = []
    for category in CATEGORIES:
        for k in range(counts.get(category, 0)):
            hub = hubs[int(rng.integers(0, n_hubs))]
            x, y = np.clip(hub + rng.normal(0.0, 0.1 * size, size=2), 0.0, size)
            scale = 3.0 if category == "employer" else 1.0
            weight = round(float(scale * rng.lognormal(0.0, 0.6)), 4)
            pois.append(Poi(f"{category}-{k:03d}", category, round(float(x), 2), round(float(y), 2), weight))
    pts = sample_points(pois, bandwidth, rng, n_aps, bounds)
    aps = [
        AccessPoint(f"ap-{i:03d}", round(float(x), 2), round(float(y), 2), round(float(rng.uniform(60.0, 120.0)), 1))
        for i, (x, y) in enumerate(pts)
    ]
    return City(pois, aps, bounds)


def city_bounds(pois: Sequence[Poi], aps: Sequence[AccessPoint] = (), margin: float = 0.0) -> Bounds:
    return Bounds.around([p.position for p in pois] + [(a.x, a.y) for a in aps], margin)
