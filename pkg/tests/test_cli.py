import csv
import io
import json
import shutil

import pytest

from hammersim.cli import main
from hammersim.config import load_config, load_report, run_config
from hammersim.disturbance import DisturbanceProfile

BASE = {
    "schema": 1,
    "geometry": {"banks": 1, "rows_per_bank": 8, "row_size_bits": 64},
    "timing": {"t_rc": 50, "t_refw": 64000000},
    "policy": {"kind": "none"},
    "profile_path": "profile.json",
}
PROFILE = [{"bank": 0, "victim_row": 3, "bit": 5, "threshold": 20, "flip_direction": "one_to_zero",
            "pattern_gate": "requires_stored_one", "coupled_side": "either"}]
PAGES = [
    {"owner": "attacker", "bank": 0, "rows": [0, 2]},
    {"owner": "victim", "bank": 0, "rows": [3, 3]},
    {"owner": "attacker", "bank": 0, "rows": [4, 7]},
]


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "profile.json").write_text(json.dumps(PROFILE))
    (tmp_path / "empty.trace").write_text("# nothing\n")
    return tmp_path


def write_config(workdir, name="cfg.json", **overrides):
    doc = {**BASE, **overrides}
    doc = {k: v for k, v in doc.items() if v is not None}
    path = workdir / name
    path.write_text(json.dumps(doc))
    return path


def attack_config(workdir, iterations=30, **extra):
    return write_config(
        workdir,
        attack={"kind": "double_sided", "target_victim_row": 3, "bank": 0, "iterations": iterations},
        page_map=PAGES,
        init_fill="ff",
        **extra,
    )


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_simulate_empty_trace(workdir, capsys):
    cfg = write_config(workdir, trace_path="empty.trace")
    assert main(["simulate", "--config", str(cfg)]) == 0
    doc = json.loads(capsys.readouterr().out)
    rep = doc["report"]
    assert rep["activations"] == 0 and rep["flips"] == [] and rep["periodic_refreshes"] == 0
    assert "isolation" not in doc


def test_simulate_breach_exit_2(workdir):
    cfg = attack_config(workdir)
    out = workdir / "rep.json"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    report, isolation = load_report(out)
    assert isolation["breaches"] >= 1 and isolation["flips_by_owner"]["victim"] >= 1
    assert report.flips_in_victim_pages == isolation["breaches"]


def test_simulate_clean_attack_exit_0(workdir):
    cfg = attack_config(workdir, iterations=5)
    assert main(["simulate", "--config", str(cfg), "--out", str(workdir / "r.json")]) == 0


def test_report_roundtrip(workdir):
    cfg = attack_config(workdir)
    out = workdir / "rep.json"
    main(["simulate", "--config", str(cfg), "--out", str(out)])
    report, _ = load_report(out)
    expected, _ = run_config(load_config(cfg))
    assert report == expected


def test_output_from_config_relative_path(workdir):
    cfg = attack_config(workdir, output={"format": "csv", "path": "summary.csv"})
    assert main(["simulate", "--config", str(cfg)]) == 2
    rows = read_csv((workdir / "summary.csv").read_text())
    assert len(rows) == 1 and int(rows[0]["flips"]) >= 1 and int(rows[0]["activations"]) == 60


@pytest.mark.parametrize(
    "overrides, needle",
    [
        (dict(trace_path="empty.trace", attack={"kind": "double_sided", "target_victim_row": 3}), "exactly one"),
        (dict(), "exactly one"),
        (dict(trace_path="empty.trace", colour="red"), "colour"),
        (dict(trace_path="empty.trace", geometry={"banks": 1, "rows_per_bank": 8, "row_size_bits": 64, "x": 1}),
         "geometry.x"),
        (dict(trace_path="empty.trace", geometry={"banks": 0, "rows_per_bank": 8, "row_size_bits": 64}), "geometry"),
        (dict(trace_path="empty.trace", schema=2), "schema"),
        (dict(trace_path="missing.trace"), "trace_path"),
        (dict(trace_path="empty.trace", policy={"kind": "para", "p": 0.1}), "policy"),
        (dict(trace_path="empty.trace", page_map=[{"owner": "root", "bank": 0, "rows": [0, 0]}]), "page_map[0]"),
        (dict(trace_path="empty.trace", output={"format": "xml"}), "output.format"),
    ],
)
def test_simulate_config_errors(workdir, capsys, overrides, needle):
    cfg = write_config(workdir, **overrides)
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert needle in capsys.readouterr().err


def test_simulate_ownership_error(workdir, capsys):
    pages = [{"owner": "attacker", "bank": 0, "rows": [0, 2]}, {"owner": "kernel", "bank": 0, "rows": [4, 4]}]
    cfg = write_config(workdir, attack={"kind": "double_sided", "target_victim_row": 3, "iterations": 1},
                       page_map=pages)
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "row 4" in capsys.readouterr().err


def test_simulate_bad_trace_line(workdir, capsys):
    (workdir / "bad.trace").write_text("R 0x0\nQ 0x8\n")
    cfg = write_config(workdir, trace_path="bad.trace")
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_sweep_degenerate_matches_simulate(workdir, capsys):
    cfg = attack_config(workdir)
    main(["sweep", "--config", str(cfg), "--param", "refresh_k", "--values", "1", "--seeds", "0"])
    rows = read_csv(capsys.readouterr().out)
    report, breach = run_config(load_config(cfg))
    assert len(rows) == 1
    row = rows[0]
    assert int(row["flips"]) == len(report.flips)
    assert int(row["breaches"]) == breach.breaches
    assert int(row["activations"]) == report.activations
    assert int(row["periodic_refreshes"]) == report.periodic_refreshes
    assert int(row["para_refreshes"]) == report.para_refreshes == 0


def test_sweep_para_extremes(workdir, capsys):
    cfg = attack_config(workdir)
    assert main(["sweep", "--config", str(cfg), "--param", "para_p", "--values", "0,1", "--seeds", "3"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert [r["value"] for r in rows] == ["0.0", "1.0"]
    assert int(rows[0]["flips"]) > 0
    assert int(rows[1]["flips"]) == 0 and int(rows[1]["para_refreshes"]) == 2 * 60


def test_sweep_shape_and_order(workdir, capsys):
    cfg = attack_config(workdir)
    assert main(["sweep", "--config", str(cfg), "--param", "iterations", "--values", "5,10,40",
                 "--seeds", "1,2"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert len(rows) == 6
    assert [(r["value"], r["seed"]) for r in rows] == [
        ("5", "1"), ("5", "2"), ("10", "1"), ("10", "2"), ("40", "1"), ("40", "2")]
    assert [int(r["activations"]) for r in rows] == [10, 10, 20, 20, 80, 80]


def test_sweep_jobs_same_output(workdir, capsys):
    cfg = attack_config(workdir)
    args = ["sweep", "--config", str(cfg), "--param", "para_p", "--values", "0.01,0.2", "--seeds", "1,2,3"]
    main(args)
    serial = capsys.readouterr().out
    main(args + ["--jobs", "2"])
    assert capsys.readouterr().out == serial


def test_sweep_errors(workdir, capsys):
    cfg = attack_config(workdir)
    assert main(["sweep", "--config", str(cfg), "--param", "bogus", "--values", "1"]) == 1
    tcfg = write_config(workdir, "t.json", trace_path="empty.trace")
    assert main(["sweep", "--config", str(tcfg), "--param", "iterations", "--values", "1"]) == 1
    assert main(["sweep", "--config", str(cfg), "--param", "refresh_k", "--values", ""]) == 1


def test_analyze(capsys):
    assert main(["analyze", "--p", "0", "--n", "7,70", "--trials", "1000", "--seed", "1"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert list(rows[0])[:5] == ["p", "N", "analytic", "empirical", "abs_error"]
    assert all(float(r["analytic"]) == 1.0 == float(r["empirical"]) for r in rows)
    assert main(["analyze", "--p", "0.01", "--n", "500", "--trials", "100000", "--seed", "5"]) == 0
    (row,) = read_csv(capsys.readouterr().out)
    assert row["within_3sigma"] == "1"
    assert abs(float(row["empirical"]) - 6.570e-3) <= 7.7e-4
    assert main(["analyze", "--trials", "0"]) == 1


def test_analyze_multiplier_table(capsys):
    assert main(["analyze", "--t-min", "183000,1280001"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert rows[0]["k"] == "7" and rows[0]["max_hammers_at_k"] == "182857"
    assert rows[0]["max_hammers_at_k_minus_1"] == "213333"
    assert rows[1]["k"] == "1"


def test_gen_profile(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["gen-profile", "--cells", "50", "--t-min", "10", "--t-max", "20", "--seed", "4", "--rows", "16"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    prof = DisturbanceProfile.load(a)
    assert len(prof) == 50 and all(10 <= c.threshold <= 20 and c.victim_row < 16 for c in prof)
    assert main(["gen-profile", "--cells", "5", "--t-min", "9", "--t-max", "3", "--out", str(a)]) == 1


def test_usage_error_is_exit_1():
    assert main(["simulate"]) == 1
    assert main(["frobnicate"]) == 1
