import csv
import json
from fractions import Fraction

import pytest

from acclive import cli
from acclive.config import ConfigError, config_from_dict, load_config
from acclive.harness import RunReport


def test_defaults_and_derived_fields():
    cfg = config_from_dict({"n": 7, "seed": 1})
    assert cfg.tau_al_max == 3
    assert cfg.k_views == 3  # delta_x defaults to 1/4
    assert cfg.delta_prime == 36
    assert cfg.window == 36 * 8


def test_seed_is_mandatory():
    with pytest.raises(ConfigError, match="seed"):
        config_from_dict({"n": 7})


def test_schema_errors_name_the_field():
    with pytest.raises(ConfigError, match=r"adversary\.kind"):
        config_from_dict({"n": 7, "seed": 1, "adversary": {"kind": 3}})
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"n": 7, "seed": 1, "bogus": True})


def test_delta_prime_must_agree_with_k_views():
    assert config_from_dict({"n": 7, "seed": 1, "delta": 2, "delta_prime": 72}).k_views == 3
    with pytest.raises(ConfigError, match="k_views"):
        config_from_dict({"n": 7, "seed": 1, "delta_prime": 36, "k_views": 4})
    with pytest.raises(ConfigError, match="multiple"):
        config_from_dict({"n": 7, "seed": 1, "delta_prime": 30})


def test_g_as_table_and_closed_form():
    cfg = config_from_dict({"n": 7, "seed": 1, "k_views": 2, "g": {"table": {"24": 9}}})
    assert cfg.g_value == 9
    cfg = config_from_dict({"n": 7, "seed": 1, "k_views": 2, "g": {"a": 0.5, "b": 1}})
    assert cfg.g_value == 12
    with pytest.raises(ConfigError, match="table"):
        config_from_dict({"n": 7, "seed": 1, "k_views": 2, "g": {"table": {"36": 9}}})


def test_regime_checks():
    with pytest.raises(ConfigError):
        config_from_dict({"n": 8, "seed": 1, "tau_al_max": 4})
    with pytest.raises(ConfigError):
        config_from_dict({"n": 7, "seed": 1, "x": "1/4", "delta_x": "1/4"})


def test_json_syntax_errors_report_line_and_column(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "n": 4,\n  "seed": 1,,\n}\n')
    with pytest.raises(ConfigError, match=r"line 3 column"):
        load_config(bad)


def test_bundled_scenarios_all_load(scenario_dir):
    names = sorted(p.stem for p in scenario_dir.glob("*.json"))
    assert {"baseline", "censor", "censor_f11", "partition_cycler_1", "framer"} <= set(names)
    for p in scenario_dir.glob("*.json"):
        load_config(p)


def test_tx_plan_targets_recipients():
    cfg = config_from_dict({
        "n": 4, "seed": 1,
        "tx_schedule": [{"round": 2, "txs": ["a"], "recipients": "honest"}, {"round": 2, "txs": ["b"], "recipients": [1]}],
    })
    plan = cfg.tx_plan(frozenset({3}))
    assert sorted(plan[2]) == [0, 1, 2]
    assert len(plan[2][1]) == 2


# -- command line ------------------------------------------------------------------


def test_run_writes_outputs(tmp_path, scenario_dir, capsys):
    out = tmp_path / "base"
    assert cli.main(["run", "--config", str(scenario_dir / "baseline.json"), "--out", str(out)]) == 0
    for name in ("trace.jsonl", "report.json", "metrics.csv"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["safety_ok"] is True
    # every latency within one view wait plus the in-view 9 delta
    assert all(v is not None and v <= 21 for v in report["latencies"].values())
    metrics = dict(csv.reader((out / "metrics.csv").open()))
    assert metrics["safety_ok"] == "1"


def test_overrides_change_the_run(tmp_path, scenario_dir):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = str(scenario_dir / "baseline.json")
    assert cli.main(["run", "--config", cfg, "--out", str(a), "--horizon", "50"]) == 0
    assert cli.main(["run", "--config", cfg, "--out", str(b), "--horizon", "50", "--seed-override", "9"]) == 0
    assert json.loads((a / "report.json").read_text())["horizon"] == 50
    assert (a / "trace.jsonl").read_text() != (b / "trace.jsonl").read_text()


def test_missing_config_exits_2(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_bad_usage_exits_2():
    assert cli.main(["explode"]) == 2
    assert cli.main(["run"]) == 2


def test_invariant_breach_exits_3(tmp_path, scenario_dir, monkeypatch):
    real = cli.run_scenario

    def breached(cfg):
        world, rep = real(cfg)
        rep.breaches.append("synthetic")
        return world, rep

    monkeypatch.setattr(cli, "run_scenario", breached)
    assert cli.main(["run", "--config", str(scenario_dir / "baseline.json"), "--out", str(tmp_path / "o")]) == 3


def _bundle(n=7, **kw):
    d = {"n": n, "tau_al_max": 3, "x": "0", "delta_x": "1/4", "delta": 1, "k_views": 3, "g": 4, "seed": 0,
         "as_of": 36 * 6, "submissions": {}}
    d.update(kw)
    return d


def test_adjudicate_empty_bundle(tmp_path, capsys):
    p = tmp_path / "b.json"
    p.write_text(json.dumps(_bundle()))
    assert cli.main(["adjudicate", str(p)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["accused"] == [] and out["bottoms"] == list(range(7))
    assert set(out) >= {"pa", "edges", "critical"}


def test_adjudicate_regime_violation_exits_2(tmp_path):
    p = tmp_path / "b.json"
    p.write_text(json.dumps(_bundle(x="1/4")))
    assert cli.main(["adjudicate", str(p)]) == 2
    p.write_text(json.dumps(_bundle()))
    assert cli.main(["adjudicate", str(p), "--x", "0.3"]) == 2


def test_validate_examples(scenario_dir, capsys):
    sched = scenario_dir / "schedules"
    assert cli.main(["validate", str(sched / "fully_async_x1.json")]) == 0
    assert cli.main(["validate", str(sched / "one_async_round_x0.json")]) == 3
    assert "violation" in capsys.readouterr().out
    assert cli.main(["validate", "--aligned-only", str(sched / "alternating_half.json")]) == 0
    assert cli.main(["validate", str(sched / "alternating_half.json")]) == 3


def test_frontier_csv(tmp_path):
    out = tmp_path / "f.csv"
    assert cli.main(["frontier", "--n", "31", "--tau", "11", "12", "13", "14", "--grid", "0.05:0.45:0.05", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4 * 9
    for tau in ("11", "12", "13", "14"):
        ach = [int(r["achievable"]) for r in rows if r["tALmax"] == tau]
        assert ach == sorted(ach, reverse=True)


def test_frontier_grid_parsing():
    assert cli.parse_grid("0.1,0.2") == [Fraction(1, 10), Fraction(1, 5)]
    assert cli.parse_grid("0:1/2:1/4") == [0, Fraction(1, 4), Fraction(1, 2)]


def test_replay_detects_tampering(tmp_path, scenario_dir):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(scenario_dir / "baseline.json"), "--out", str(out), "--horizon", "60"]) == 0
    assert cli.main(["replay", "--out", str(out)]) == 0
    trace = out / "trace.jsonl"
    trace.write_text(trace.read_text().replace('"round":5', '"round":6', 1))
    assert cli.main(["replay", "--out", str(out)]) == 3


def test_log_level_from_environment(monkeypatch):
    import logging

    monkeypatch.setenv("ACCLIVE_LOG", "debug")
    root = logging.getLogger()
    old = root.level
    for h in list(root.handlers):
        root.removeHandler(h)
    try:
        cli._setup_logging()
        assert root.level == logging.DEBUG
    finally:
        root.setLevel(old)


def test_run_report_mean_latency():
    rep = RunReport(True, {"a": 4, "b": None, "c": 8}, [], [], [], None, 0)
    assert rep.mean_latency == 6
