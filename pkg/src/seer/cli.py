"""Command line entry point: ``seer <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import urllib.request
from collections import Counter
from pathlib import Path

import numpy as np

from . import citysim, control, knowlet, knowstore, pipeline
from .config import RunConfig, load_config
from .errors import ConfigError, SeerError

log = logging.getLogger("seer")


class StageError(SeerError):
    def __init__(self, stage: str, exc: BaseException) -> None:
        self.stage = stage
        self.cause = exc
        super().__init__(f"{stage}: {type(exc).__name__}: {exc}")


class _stage:
    """Re-raise anything escaping the block tagged with the stage name."""

    def __init__(self, name: str) -> None:
        self.name = name

    def __enter__(self) -> None:
        log.info("stage %s", self.name)

    def __exit__(self, kind, exc, tb) -> bool:
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def _load_city(pois_path, aps_path):
    pois = citysim.load_pois(pois_path)
    aps = citysim.load_aps(aps_path)
    if not pois:
        raise ConfigError(f"no POIs in {pois_path}")
    if not aps:
        raise ConfigError(f"no access points in {aps_path}")
    return pois, aps, citysim.city_bounds(pois, aps)


def simulate_city(pois, aps, bounds, citizens: int, seconds: int, seed: int, bandwidth: float):
    rng = np.random.default_rng(seed)
    people = citysim.generate_citizens(citizens, pois, bandwidth, rng, bounds=bounds)
    return citysim.simulate(people, aps, 0, seconds, rng, pois)


def density_report(pois, aps, bounds, bandwidth: float, cell_size: float, csv_path: Path, png_path: Path | None):
    grid = citysim.build_density(pois, bandwidth, citysim.GridSpec.covering(bounds, cell_size))
    grid.to_csv(csv_path)
    if png_path is not None:
        from .plotting import plot_density

        plot_density(grid, png_path, pois, aps)
    return grid


def evaluation_report(metrics, json_path: Path, figures: bool = True) -> None:
    control.write_metrics(metrics, json_path)
    control.write_metrics_csv(metrics, json_path.with_suffix(".csv"))
    if figures:
        from .plotting import plot_hit_rates

        plot_hit_rates(metrics, json_path.with_suffix(".png"))


def _serve_check(snapshot: Path, port: int, expected_records: int) -> dict:
    """Bring the API up on ``port`` (0 = any free port), read its metadata, shut it down."""
    from .disseminate import KnowledgeService, make_server

    service = KnowledgeService()
    service.load(snapshot)
    server = make_server(service, "127.0.0.1", port)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/knowledge/meta"
        with urllib.request.urlopen(url, timeout=10) as resp:
            meta = json.loads(resp.read())
    finally:
        server.shutdown()
        server.server_close()
    if meta.get("total_records") != expected_records:
        raise SeerError(f"served model reports {meta.get('total_records')} records, expected {expected_records}")
    return meta


def run_all(config: RunConfig, figures: bool = True) -> dict[str, Path]:
    """simulate -> anonymize -> analyze -> persist -> serve -> evaluate."""
    with _stage("config"):
        config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "raw": out / "raw.jsonl",
        "events": out / "events.jsonl",
        "train": out / "events_train.jsonl",
        "test": out / f"events_week_{config.weeks}.jsonl",
        "snapshot": out / "model.snapshot",
        "metrics": out / "metrics.json",
        "density": out / "density.csv",
    }
    with _stage("citysim"):
        pois, aps, bounds = _load_city(config.pois, config.aps)
        raw = simulate_city(pois, aps, bounds, config.citizens, config.weeks * citysim.WEEK, config.seed, config.bandwidth)
        citysim.write_raw_events(raw, paths["raw"])
        density_report(
            pois, aps, bounds, config.bandwidth, citysim.DEFAULT_CELL_SIZE,
            paths["density"], out / "density.png" if figures else None,
        )
    with _stage("knowlet"):
        drops: Counter = Counter()
        events = list(knowlet.anonymize_stream(raw, config.master_key.encode("utf-8"), drops))
        split = (config.weeks - 1) * citysim.WEEK
        train = [e for e in events if e.timestamp < split]
        test = [e for e in events if e.timestamp >= split]
        knowlet.write_events(events, paths["events"])
        knowlet.write_events(train, paths["train"])
        knowlet.write_events(test, paths["test"])
    with _stage("pipeline"):
        pcfg = pipeline.PipelineConfig(config.t_gap, config.orders, config.batch)
        model = pipeline.analyze_stream(knowlet.iter_events(paths["train"]), pcfg)
    with _stage("knowstore"):
        knowstore.persist(model, paths["snapshot"])
    if config.serve_check:
        with _stage("disseminate"):
            _serve_check(paths["snapshot"], config.port, model.total_records)
    with _stage("control"):
        ecfg = control.EvalConfig(
            orders=config.orders, top_k=config.top_k, l_hit_ms=config.l_hit, l_miss_ms=config.l_miss,
            ttl=config.effective_ttl, capacity=config.capacity, t_gap=config.t_gap,
        )
        metrics = control.evaluate(knowstore.restore(paths["snapshot"]), test, ecfg)
        evaluation_report(metrics, paths["metrics"], figures)
        if figures:
            from .plotting import plot_transitions

            plot_transitions(model, out / "transitions.png")
    print(f"events: {len(events)} (train {len(train)}, test {len(test)}); records: {model.total_records}")
    print(control.summary_table(metrics))
    return paths


# -- subcommands --------------------------------------------------------------


def cmd_gen_city(args) -> int:
    city = citysim.generate_city(args.seed, size=args.size, n_aps=args.ap_count)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    citysim.write_pois(city.pois, out / "pois.jsonl")
    citysim.write_aps(city.aps, out / "aps.jsonl")
    print(f"wrote {len(city.pois)} POIs and {len(city.aps)} APs to {out}")
    return 0


def cmd_simulate(args) -> int:
    pois, aps, bounds = _load_city(args.pois, args.aps)
    raw = simulate_city(pois, aps, bounds, args.citizens, args.days * citysim.DAY, args.seed, args.bandwidth)
    n = citysim.write_raw_events(raw, args.out)
    print(f"wrote {n} raw events to {args.out}")
    return 0


def cmd_anonymize(args) -> int:
    drops: Counter = Counter()
    raw = citysim.read_raw_events(args.input)
    n = knowlet.write_events(knowlet.anonymize_stream(raw, args.key.encode("utf-8"), drops), args.out)
    print(f"wrote {n} events to {args.out}" + (f" (dropped {dict(drops)})" if drops else ""))
    return 0


def cmd_density(args) -> int:
    pois = citysim.load_pois(args.pois)
    if not pois:
        raise ConfigError(f"no POIs in {args.pois}")
    aps = citysim.load_aps(args.aps) if args.aps else []
    bounds = citysim.city_bounds(pois, aps)
    out = Path(args.out)
    figure = None if args.no_figure else Path(args.figure or out.with_suffix(".png"))
    grid = density_report(pois, aps, bounds, args.bandwidth, args.cell_size, out, figure)
    ny, nx = grid.values.shape
    print(f"wrote {nx}x{ny} density grid to {out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = pipeline.PipelineConfig(args.t_gap, args.orders, args.batch)
    events = knowlet.iter_events(args.input)
    model = pipeline.analyze_stream(events, cfg) if args.mode == "stream" else pipeline.analyze(events, cfg)
    knowstore.persist(model, args.out)
    states = ", ".join(f"order {k}: {v}" for k, v in model.state_counts().items())
    print(f"{model.total_records} transitions; states {states}; wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .disseminate import serve

    serve(args.snapshot, args.port, args.host)
    return 0


def cmd_evaluate(args) -> int:
    model = knowstore.restore(args.snapshot)
    test = knowlet.read_events(args.test)
    cfg = control.EvalConfig(
        orders=args.orders, top_k=args.top_k, l_hit_ms=args.l_hit, l_miss_ms=args.l_miss,
        ttl=args.ttl if args.ttl is not None else args.t_gap, capacity=args.capacity, t_gap=args.t_gap,
    )
    metrics = control.evaluate(model, test, cfg)
    evaluation_report(metrics, Path(args.out), not args.no_figure)
    print(control.summary_table(metrics))
    return 0


_RUN_ALL_FLAGS = (
    ("pois", str), ("aps", str), ("out_dir", str), ("citizens", int), ("weeks", int), ("seed", int),
    ("bandwidth", float), ("master_key", str), ("t_gap", int), ("orders", int), ("batch", int),
    ("top_k", int), ("l_hit", float), ("l_miss", float), ("ttl", int), ("capacity", int), ("port", int),
)


def cmd_run_all(args) -> int:
    overrides = {name: getattr(args, name) for name, _ in _RUN_ALL_FLAGS}
    if args.no_serve_check:
        overrides["serve_check"] = False
    config = load_config(args.config, overrides)
    run_all(config, figures=not args.no_figure)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seer", description="Wi-Fi mobility knowledge pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-city", help="write a synthetic POI and AP deployment")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=float, default=6000.0, help="city side length in meters")
    p.add_argument("--ap-count", type=int, default=220)
    p.set_defaults(func=cmd_gen_city)

    p = sub.add_parser("simulate", help="simulate citizens and write raw handover events")
    p.add_argument("--pois", required=True)
    p.add_argument("--aps", required=True)
    p.add_argument("--citizens", type=int, default=100)
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--bandwidth", type=float, default=citysim.DEFAULT_BANDWIDTH)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("anonymize", help="pseudonymize raw events into the wire format")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--key", required=True, help="master key (UTF-8 text)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("density", help="write the POI kernel density grid as CSV")
    p.add_argument("--pois", required=True)
    p.add_argument("--aps")
    p.add_argument("--bandwidth", type=float, default=citysim.DEFAULT_BANDWIDTH)
    p.add_argument("--cell-size", type=float, default=citysim.DEFAULT_CELL_SIZE)
    p.add_argument("--out", required=True)
    p.add_argument("--figure", help="PNG path (default: next to --out)")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("analyze", help="build the Markov model snapshot from wire-format events")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--t-gap", type=int, default=300)
    p.add_argument("--orders", type=int, default=3)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--mode", choices=("stream", "batch"), default="stream")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="serve a snapshot over HTTP")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("evaluate", help="replay a test trace against a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--orders", type=int, default=3)
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--l-hit", type=float, default=5.0)
    p.add_argument("--l-miss", type=float, default=50.0)
    p.add_argument("--t-gap", type=int, default=300)
    p.add_argument("--ttl", type=int, help="default: t-gap")
    p.add_argument("--capacity", type=int, default=1024)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-all", help="end-to-end run from a config file")
    p.add_argument("--config")
    for name, kind in _RUN_ALL_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)
    p.add_argument("--no-serve-check", action="store_true")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_run_all)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (SeerError, OSError, ValueError) as exc:
        print(f"seer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
