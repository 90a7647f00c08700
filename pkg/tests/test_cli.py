import json

import pytest

from seer import citysim, knowlet, knowstore
from seer.cli import main, run_all
from seer.config import RunConfig, dump_config, load_config
from seer.errors import ConfigError


@pytest.fixture(scope="module")
def small_run(tmp_path_factory, city_files):
    pois, aps = city_files
    out = tmp_path_factory.mktemp("run")
    cfg = RunConfig(pois=pois, aps=aps, out_dir=out, citizens=15, weeks=2, seed=3)
    paths = run_all(cfg)
    return cfg, paths


def test_gen_city(tmp_path, capsys):
    assert main(["gen-city", "--seed", "3", "--out-dir", str(tmp_path), "--ap-count", "40"]) == 0
    assert len(citysim.load_aps(tmp_path / "aps.jsonl")) == 40
    assert citysim.load_pois(tmp_path / "pois.jsonl")
    assert "40 APs" in capsys.readouterr().out


def test_run_all_artifacts(small_run):
    cfg, paths = small_run
    for key in ("raw", "events", "train", "test", "snapshot", "metrics", "density"):
        assert paths[key].is_file(), key
    out = paths["metrics"].parent
    for name in ("metrics.csv", "metrics.png", "density.png", "transitions.png"):
        assert (out / name).is_file()
    metrics = json.loads(paths["metrics"].read_text())
    assert set(metrics) == {"1", "2", "3"}


def test_run_all_tests_on_last_week_only(small_run):
    cfg, paths = small_run
    test = knowlet.read_events(paths["test"])
    train = knowlet.read_events(paths["train"])
    assert test and train
    assert all(citysim.WEEK <= e.timestamp < 2 * citysim.WEEK for e in test)
    assert all(e.timestamp < citysim.WEEK for e in train)
    assert len(test) + len(train) == len(knowlet.read_events(paths["events"]))


def test_composition_equals_subcommands(small_run, tmp_path, capsys):
    cfg, paths = small_run
    raw = tmp_path / "raw.jsonl"
    events = tmp_path / "events.jsonl"
    snap = tmp_path / "model.snapshot"
    metrics = tmp_path / "metrics.json"
    argv_sim = ["simulate", "--pois", str(cfg.pois), "--aps", str(cfg.aps), "--citizens", "15",
                "--days", "14", "--seed", "3", "--out", str(raw)]
    assert main(argv_sim) == 0
    assert raw.read_bytes() == paths["raw"].read_bytes()
    assert main(["anonymize", "--in", str(raw), "--key", cfg.master_key, "--out", str(events)]) == 0
    assert events.read_bytes() == paths["events"].read_bytes()
    assert main(["analyze", "--in", str(paths["train"]), "--out", str(snap)]) == 0
    assert snap.read_bytes() == paths["snapshot"].read_bytes()
    assert main(["evaluate", "--snapshot", str(snap), "--test", str(paths["test"]), "--out", str(metrics)]) == 0
    assert metrics.read_bytes() == paths["metrics"].read_bytes()
    assert "hit_rate" in capsys.readouterr().out


def test_analyze_batch_mode_matches_stream(small_run, tmp_path):
    _, paths = small_run
    a, b = tmp_path / "a.snapshot", tmp_path / "b.snapshot"
    assert main(["analyze", "--in", str(paths["train"]), "--mode", "batch", "--out", str(a)]) == 0
    assert main(["analyze", "--in", str(paths["train"]), "--mode", "stream", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_density_command(city_files, tmp_path):
    pois, aps = city_files
    out = tmp_path / "density.csv"
    assert main(["density", "--pois", str(pois), "--aps", str(aps), "--out", str(out), "--cell-size", "100"]) == 0
    assert out.read_text().startswith("x,y,density\n")
    assert (tmp_path / "density.png").is_file()


def test_missing_pois_fails_before_work(tmp_path, city_files, capsys):
    _, aps = city_files
    out = tmp_path / "never"
    code = main(["run-all", "--pois", str(tmp_path / "nope.jsonl"), "--aps", str(aps), "--out-dir", str(out)])
    assert code == 1
    assert not out.exists()
    assert "config" in capsys.readouterr().err


def test_bad_input_reports_module(tmp_path, capsys):
    bad = tmp_path / "events.jsonl"
    bad.write_text('{"id":"x","from":"a","to":"b"}\n')
    assert main(["analyze", "--in", str(bad), "--out", str(tmp_path / "m")]) == 1
    assert "line 1" in capsys.readouterr().err


def test_config_file_and_overrides(tmp_path, city_files):
    pois, aps = city_files
    ini = tmp_path / "run.ini"
    ini.write_text(
        f"[paths]\npois = {pois}\naps = {aps}\nout_dir = out\n\n"
        "[sim]\ncitizens = 7\nweeks = 3\n\n[control]\ntop_k = 2\n"
    )
    cfg = load_config(ini, {"citizens": 9, "ttl": None})
    assert cfg.citizens == 9 and cfg.weeks == 3 and cfg.top_k == 2
    assert cfg.out_dir == tmp_path / "out"
    assert cfg.effective_ttl == cfg.t_gap == 300
    cfg.validate()
    again = tmp_path / "again.ini"
    again.write_text(dump_config(cfg))
    assert load_config(again) == cfg


@pytest.mark.parametrize(
    "text",
    ["[bogus]\nx = 1\n", "[sim]\nflavour = 1\n", "[sim]\ncitizens = many\n", "not an ini"],
)
def test_config_rejects_bad_files(tmp_path, text):
    ini = tmp_path / "bad.ini"
    ini.write_text(text)
    with pytest.raises(ConfigError):
        load_config(ini)


@pytest.mark.parametrize("field, value", [("weeks", 1), ("citizens", 0), ("t_gap", 0), ("master_key", "")])
def test_config_validation(city_files, field, value):
    pois, aps = city_files
    cfg = RunConfig(pois=pois, aps=aps, **{field: value})
    with pytest.raises(ConfigError):
        cfg.validate()


def test_snapshot_restores(small_run):
    _, paths = small_run
    model = knowstore.restore(paths["snapshot"])
    assert model.max_order == 3 and model.total_records > 0
