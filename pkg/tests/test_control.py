import pytest

from seer import control, pipeline
from seer.control import EvalConfig, SwitchTable
from seer.errors import ConfigError, OrderOutOfRange
from seer.knowstore import MarkovModel

from .conftest import cycle_trace, ev


@pytest.fixture
def abc_model():
    m = MarkovModel(2)
    m.add(1, ("A",), "B", 2)
    m.add(1, ("A",), "C", 1)
    return m


def test_predict_top1(abc_model):
    assert control.predict(abc_model, "A", [], 1, 1) == ["B"]


def test_predict_top2(abc_model):
    assert control.predict(abc_model, "A", [], 1, 2) == ["B", "C"]


def test_predict_backs_off(abc_model):
    preds, used = control.predict_with_order(abc_model, "A", ["Q"], 2, 1)
    assert preds == ["B"] and used == 1


def test_predict_prefers_higher_order(abc_model):
    abc_model.add(2, ("Q", "A"), "C", 1)
    assert control.predict_with_order(abc_model, "A", ["Q"], 2, 1) == (["C"], 2)


def test_predict_nothing_known():
    assert control.predict_with_order(MarkovModel(3), "A", ["X", "Y"], 3, 1) == ([], 0)


def test_predict_order_out_of_range(abc_model):
    with pytest.raises(OrderOutOfRange):
        control.predict(abc_model, "A", [], 3, 1)


def test_query_state_padding():
    assert control.query_state("A", [], 3) == ("^", "^", "A")
    assert control.query_state("A", ["X", "Y", "Z"], 3) == ("Y", "Z", "A")
    assert control.query_state("A", ["X"], 1) == ("A",)


def test_preallocate_inserts():
    table = control.preallocate(SwitchTable(), ["B"], "dev", 10)
    assert table.entries("B") == {"dev": 10}


def test_preallocate_evicts_oldest():
    table = SwitchTable(capacity=1)
    control.preallocate(table, ["B"], "old", 1)
    control.preallocate(table, ["B"], "new", 2)
    assert table.entries("B") == {"new": 2}


def test_preallocate_refreshes_duplicate():
    table = SwitchTable(capacity=2)
    control.preallocate(table, ["B"], "dev", 1)
    control.preallocate(table, ["B"], "other", 2)
    control.preallocate(table, ["B"], "dev", 3)
    assert table.entries("B") == {"other": 2, "dev": 3}
    control.preallocate(table, ["B"], "third", 4)
    assert table.entries("B") == {"dev": 3, "third": 4}


def test_entries_expire_after_ttl():
    table = SwitchTable(ttl=300)
    control.preallocate(table, ["B"], "dev", 0)
    assert table.has("B", "dev", 299)
    assert not table.has("B", "dev", 300)


def test_switch_table_validation():
    with pytest.raises(ConfigError):
        SwitchTable(capacity=0)


# -- evaluation -------------------------------------------------------------


def _linear_trace(t0):
    """Deterministic commutes: every state has exactly one successor."""
    events = []
    for d in range(6):
        t = t0 + d * 1000
        path = ["P", "Q", "R", "S"] if d % 2 else ["W", "X", "Y"]
        events.append(ev(f"u{d}", "null", path[0], t))
        for a, b in zip(path, path[1:]):
            t += 50
            events.append(ev(f"u{d}", a, b, t))
        events.append(ev(f"u{d}", path[-1], "null", t + 50))
    return sorted(events, key=lambda e: (e.timestamp, e.id))


def test_perfectly_predictable_trace():
    model = pipeline.analyze(_linear_trace(0))
    metrics = control.evaluate(model, _linear_trace(100_000))
    for m in metrics.values():
        assert m.hit_rate == 1.0 and m.misses == 0 and m.colds == 0
        assert m.mean_latency_ms == 5.0


def test_empty_model_is_all_cold():
    metrics = control.evaluate(MarkovModel(3), _linear_trace(0))
    for m in metrics.values():
        assert m.hits == 0 and m.misses == 0 and m.colds == 15  # 3 devices x 3 hops + 3 x 2
        assert m.hit_rate == 0.0 and m.mean_latency_ms == 50.0


def test_order_two_dependence():
    # Enumerated by hand: over the 6-cycle every AP is followed by two
    # successors equally often (order-1 top-1 right half the time), while the
    # previous AP pins the successor (order 2 always right).
    model = pipeline.analyze(cycle_trace(0))
    metrics = control.evaluate(model, cycle_trace(1_000_000))
    assert metrics[1].hit_rate == pytest.approx(0.5)
    assert metrics[2].hit_rate == 1.0
    assert metrics[3].hit_rate == 1.0


def test_branching_example_counts():
    # A->B->C and D->B->E equally often.  Hand count per device: the first hop
    # is always right; the hop out of B is right at order 1 only for A-devices
    # (C < E), so order 1 scores 3 of 4 and order 2 scores 4 of 4.
    def trace(t0):
        events = []
        for d in range(20):
            t = t0 + d * 1000
            a, c = ("A", "C") if d % 2 == 0 else ("D", "E")
            events += [ev(f"d{d}", "null", a, t), ev(f"d{d}", a, "B", t + 60),
                       ev(f"d{d}", "B", c, t + 120), ev(f"d{d}", c, "null", t + 180)]
        return events

    metrics = control.evaluate(pipeline.analyze(trace(0)), trace(10**6))
    assert (metrics[1].hits, metrics[1].misses) == (30, 10)
    assert (metrics[2].hits, metrics[2].misses) == (40, 0)


def test_stale_preallocation_is_a_miss():
    model = pipeline.analyze(_linear_trace(0))
    slow = [ev("u", "null", "W", 0), ev("u", "W", "X", 200), ev("u", "X", "Y", 400)]
    # ttl 100: the entry planted when the device settled is gone by the hop
    metrics = control.evaluate(model, slow, EvalConfig(orders=1, ttl=100))
    assert metrics[1].hits == 0 and metrics[1].misses == 2


def test_count_conservation_and_determinism(week_events):
    split = 4 * 86_400
    model = pipeline.analyze([e for e in week_events if e.timestamp < split])
    test = [e for e in week_events if e.timestamp >= split]
    expected = len(pipeline.trace_records(test, pipeline.PipelineConfig(max_order=1)))
    a = control.evaluate(model, test)
    b = control.evaluate(model, test)
    assert control.metrics_to_json(a) == control.metrics_to_json(b)
    for m in a.values():
        assert m.hits + m.misses + m.colds == expected
        assert 0.0 <= m.hit_rate <= 1.0


def test_top_k_monotone(week_events):
    split = 4 * 86_400
    model = pipeline.analyze([e for e in week_events if e.timestamp < split])
    test = [e for e in week_events if e.timestamp >= split]
    for order in (1, 2, 3):
        rates = [
            control.evaluate(model, test, EvalConfig(orders=order, top_k=k))[order].hit_rate for k in (1, 2, 3)
        ]
        assert rates == sorted(rates)


def test_backoff_never_raises_arity(week_events):
    model = pipeline.analyze(week_events)
    for order in (1, 2, 3):
        for history in ([], ["ap-001"], ["ap-001", "ap-002", "ap-003"]):
            for ap in ("ap-000", "ap-010", "nowhere"):
                _, used = control.predict_with_order(model, ap, history, order, 1)
                assert 0 <= used <= order


def test_evaluate_config_errors(abc_model):
    with pytest.raises(ConfigError):
        control.evaluate(abc_model, [], EvalConfig(orders=3))
    with pytest.raises(ConfigError):
        control.evaluate(abc_model, [], EvalConfig(orders=1, top_k=0))


def test_metrics_files(tmp_path):
    model = pipeline.analyze(cycle_trace(0))
    metrics = control.evaluate(model, cycle_trace(10**6))
    control.write_metrics(metrics, tmp_path / "m.json")
    control.write_metrics_csv(metrics, tmp_path / "m.csv")
    import json

    data = json.loads((tmp_path / "m.json").read_text())
    assert set(data) == {"1", "2", "3"}
    assert set(data["1"]) >= {"hits", "misses", "colds", "hit_rate", "mean_latency_ms"}
    assert control.metrics_from_dict(data)[2].hit_rate == 1.0
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0].startswith("order,hits") and len(rows) == 4
