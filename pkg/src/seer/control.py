"""Prediction-driven flow pre-allocation and its replay evaluation.

Every AP hangs off its own switch.  When a device settles on an AP the
controller asks the model where it goes next and installs a flow entry for
the device at the predicted switches.  A handover whose destination already
holds a live entry for that device is a hit.

Latencies are synthetic proxies (defaults 5 ms hit / 50 ms miss), not
measurements.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .citysim import START_SENTINEL
from .errors import ConfigError
from .knowlet import HandoverEvent
from .knowstore import MarkovModel, transition_distribution
from .pipeline import collapse_trivial, group_by_device, sessionize


def query_state(current_ap: str, history: Sequence[str], order: int) -> tuple[str, ...]:
    """State of arity ``order``: the last ``order - 1`` history entries, START-padded, then the AP."""
    keep = list(history)[-(order - 1) :] if order > 1 else []
    pad = [START_SENTINEL] * (order - 1 - len(keep))
    return tuple(pad + keep + [current_ap])


def predict_with_order(
    model: MarkovModel,
    current_ap: str,
    history: Sequence[str],
    order: int,
    top_k: int = 1,
) -> tuple[list[str], int]:
    """Top-k next APs plus the order that produced them (0 when nothing is known).

    Unseen states back off one order at a time down to order 1.
    """
    model.check_order(order)
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    for k in range(order, 0, -1):
        dist = transition_distribution(model, k, query_state(current_ap, history, k))
        if dist.entries:
            return [to for to, _ in dist.entries[:top_k]], k
    return [], 0


def predict(model: MarkovModel, current_ap: str, history: Sequence[str], order: int, top_k: int = 1) -> list[str]:
    return predict_with_order(model, current_ap, history, order, top_k)[0]


@dataclass
class SwitchTable:
    capacity: int = 1024
    ttl: int = 300
    switches: dict[str, OrderedDict] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capacity < 1 or self.ttl <= 0:
            raise ConfigError("switch capacity and ttl must be positive")

    def expire(self, ap: str, now: int) -> None:
        sw = self.switches.get(ap)
        if not sw:
            return
        # entries are kept in insertion-time order
        while sw:
            device, ts = next(iter(sw.items()))
            if now - ts < self.ttl:
                break
            sw.popitem(last=False)

    def has(self, ap: str, device: str, now: int) -> bool:
        self.expire(ap, now)
        return device in self.switches.get(ap, ())

    def entries(self, ap: str) -> dict[str, int]:
        return dict(self.switches.get(ap, {}))


def preallocate(table: SwitchTable, ap_predictions: Iterable[str], device_id: str, now: int) -> SwitchTable:
    for ap in ap_predictions:
        table.expire(ap, now)
        sw = table.switches.setdefault(ap, OrderedDict())
        if device_id in sw:
            del sw[device_id]
        elif len(sw) >= table.capacity:
            sw.popitem(last=False)
        sw[device_id] = now
    return table


@dataclass(frozen=True)
class EvalConfig:
    orders: int = 3
    top_k: int = 1
    l_hit_ms: float = 5.0
    l_miss_ms: float = 50.0
    ttl: int = 300
    capacity: int = 1024
    t_gap: int = 300


@dataclass
class OrderMetrics:
    order: int
    hits: int = 0
    misses: int = 0
    colds: int = 0
    mean_latency_ms: float = 0.0
    states: int = 0

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.colds

    @property
    def hit_rate(self) -> float:
        judged = self.hits + self.misses
        return self.hits / judged if judged else 0.0

    def to_dict(self) -> dict:
        return {
            "hits": self.hits,
            "misses": self.misses,
            "colds": self.colds,
            "hit_rate": self.hit_rate,
            "mean_latency_ms": self.mean_latency_ms,
            "states": self.states,
        }


def _timeline(test_events: Iterable[HandoverEvent], t_gap: int) -> list[tuple]:
    """(time, phase, device, seq, payload) items; phase 0 checks a handover, 1 predicts.

    Ordered by time, then device, then position within the device's replay.
    """
    items = []
    for device, events in group_by_device(test_events).items():
        for s_idx, session in enumerate(sessionize(events, t_gap)):
            settled = session.transitions[0].ts
            hops = collapse_trivial(session).transitions
            if not hops:
                continue
            seq = 0
            items.append((settled, 1, device, (s_idx, seq), (hops[0].frm, ())))
            froms: list[str] = []
            for j, hop in enumerate(hops):
                seq += 1
                items.append((hop.ts, 0, device, (s_idx, seq), hop.to))
                froms.append(hop.frm)
                current = hops[j + 1].frm if j + 1 < len(hops) else hop.to
                seq += 1
                items.append((hop.ts, 1, device, (s_idx, seq), (current, tuple(froms))))
    items.sort(key=lambda it: (it[0], it[2], it[3]))
    return items


def evaluate(
    model: MarkovModel,
    test_events: Iterable[HandoverEvent],
    config: EvalConfig = EvalConfig(),
) -> dict[int, OrderMetrics]:
    """Replay the test trace once per chain order and score the pre-allocations.

    The test trace goes through the same sessionize/collapse view as training,
    so the evaluated handovers are exactly the modeled transitions.
    """
    if not 1 <= config.orders <= model.max_order:
        raise ConfigError(f"orders must be within 1..{model.max_order}")
    if config.top_k < 1 or config.t_gap <= 0:
        raise ConfigError("top_k and t_gap must be positive")
    timeline = _timeline(test_events, config.t_gap)
    results = {}
    for order in range(1, config.orders + 1):
        table = SwitchTable(config.capacity, config.ttl)
        last_pred: dict[str, list[str]] = {}
        m = OrderMetrics(order, states=len(model.tables[order]))
        latency = 0.0
        for t, phase, device, _, payload in timeline:
            if phase == 1:
                ap, history = payload
                preds = predict(model, ap, history, order, config.top_k)
                last_pred[device] = preds
                preallocate(table, preds, device, t)
                continue
            preds = last_pred.get(device)
            if not preds:
                m.colds += 1
                latency += config.l_miss_ms
            elif payload in preds and table.has(payload, device, t):
                m.hits += 1
                latency += config.l_hit_ms
            else:
                m.misses += 1
                latency += config.l_miss_ms
        m.mean_latency_ms = latency / m.total if m.total else 0.0
        results[order] = m
    return results


def metrics_to_json(metrics: dict[int, OrderMetrics]) -> str:
    return json.dumps({str(k): v.to_dict() for k, v in sorted(metrics.items())}, indent=2, sort_keys=True) + "\n"


def write_metrics(metrics: dict[int, OrderMetrics], path: str | Path) -> None:
    Path(path).write_text(metrics_to_json(metrics))


def write_metrics_csv(metrics: dict[int, OrderMetrics], path: str | Path) -> None:
    lines = ["order,hits,misses,colds,hit_rate,mean_latency_ms,states"]
    for k, m in sorted(metrics.items()):
        lines.append(f"{k},{m.hits},{m.misses},{m.colds},{m.hit_rate:.6f},{m.mean_latency_ms:.3f},{m.states}")
    Path(path).write_text("\n".join(lines) + "\n")


def summary_table(metrics: dict[int, OrderMetrics]) -> str:
    rows = [f"{'order':>5} {'hits':>7} {'misses':>7} {'colds':>6} {'hit_rate':>9} {'latency_ms':>11} {'states':>7}"]
    for k, m in sorted(metrics.items()):
        rows.append(
            f"{k:>5} {m.hits:>7} {m.misses:>7} {m.colds:>6} {m.hit_rate:>9.4f} {m.mean_latency_ms:>11.3f} {m.states:>7}"
        )
    return "\n".join(rows)


def metrics_from_dict(data: dict) -> dict[int, OrderMetrics]:
    out = {}
    for key, row in data.items():
        m = OrderMetrics(int(key), row["hits"], row["misses"], row["colds"], row["mean_latency_ms"], row.get("states", 0))
        out[m.order] = m
    return out


__all__ = [
    "EvalConfig",
    "OrderMetrics",
    "SwitchTable",
    "evaluate",
    "predict",
    "predict_with_order",
    "preallocate",
    "query_state",
]
