import csv
import filecmp
import textwrap
from pathlib import Path

import numpy as np
import pytest

from ovdp.bench import (
    SUMMARY_HEADER,
    ConfigError,
    DesignSpec,
    load_config,
    parse_config,
    run_experiment,
    verify_experiment,
)
from ovdp.cli import main
from ovdp.problems import GsrConfig, MnrConfig
from ovdp.solver import CSV_HEADER

ROOT = Path(__file__).resolve().parents[1]

SMALL_GSR = """\
task: gsr
seed: 3
params: {n_vertices: 40, k: 4, rate: 0.3}
designs:
  - {type: ovdp, beta: [0, 1, 2]}
  - {type: sp, gamma1: 0.1}
  - asp
max_iters: 3000
oracle_iters: 3000
record_every: 50
"""


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# config parsing


def test_parse_small_config():
    cfg = parse_config(SMALL_GSR)
    assert cfg.task == "gsr" and isinstance(cfg.params, GsrConfig)
    assert cfg.params.graph_seed == 3 and cfg.params.signal_seed == 3
    assert [d.label for d in cfg.designs] == ["OVDP(beta=0)", "OVDP(beta=1)", "OVDP(beta=2)", "SP(g1=0.1)", "ASP"]
    assert cfg.max_iters == 3000 and cfg.oracle_iters == 3000 and cfg.record_every == 50
    assert cfg.stop_tol == 1e-5


@pytest.mark.parametrize("name", ["mnr_desk.yaml", "unmix_desk.yaml", "gsr_desk.yaml"])
def test_shipped_configs_parse(name):
    cfg = load_config(ROOT / "configs" / name)
    assert cfg.designs and cfg.max_iters == 10000 and cfg.oracle_iters == 20000


def test_pdp_design_label_and_theta():
    cfg = parse_config("task: mnr\ndesigns:\n  - {type: pdp, tau: [1, 0.1], theta: 0.02}\n")
    assert [d.label for d in cfg.designs] == ["PDP(tau=1,theta=0.02)", "PDP(tau=0.1,theta=0.02)"]
    assert cfg.designs[0] == DesignSpec("pdp", 1.0, 0.02)
    assert isinstance(cfg.params, MnrConfig)


@pytest.mark.parametrize(
    "text,field,line",
    [
        ("task: deblur\ndesigns: [asp]\n", "task", 1),
        ("task: gsr\ndesigns: []\n", "designs", 2),
        ("task: gsr\nbogus: 1\ndesigns: [asp]\n", "bogus", 2),
        ("task: gsr\ndesigns:\n  - {type: ovdp, beta: 3}\n", "designs[0].beta", 3),
        ("task: gsr\ndesigns:\n  - asp\n  - {type: magic}\n", "designs[1].type", 4),
        ("task: gsr\ndesigns: [asp]\nmax_iters: 0\n", "max_iters", 3),
        ("task: gsr\nparams: {colour: red}\ndesigns: [asp]\n", "params.colour", 2),
        ("task: gsr\ndesigns:\n  - {type: sp}\n", "designs[0]", 3),
        ("task: gsr\ndesigns: [asp]\noracle_designs: [pdp]\n", "oracle_designs", 3),
    ],
)
def test_config_errors_carry_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.field == field
    assert err.value.line == line


def test_config_not_yaml():
    with pytest.raises(ConfigError):
        parse_config("task: [unclosed\n")
    with pytest.raises(ConfigError):
        parse_config("- just\n- a list\n")
    with pytest.raises(ConfigError):
        parse_config("designs: [asp]\n")


# runner


def test_single_design_run(tmp_path):
    cfg = parse_config(SMALL_GSR.replace("  - {type: sp, gamma1: 0.1}\n  - asp\n", "").replace("[0, 1, 2]", "1"))
    cfg.out = tmp_path / "out"
    res = run_experiment(cfg, quiet=True)
    assert not res.failed
    files = sorted(p.name for p in cfg.out.iterdir())
    assert files == ["OVDP_beta=1.csv", "summary.csv"]
    rows = read_rows(cfg.out / "summary.csv")
    assert tuple(rows[0]) == SUMMARY_HEADER and len(rows) == 2
    assert tuple(read_rows(cfg.out / "OVDP_beta=1.csv")[0]) == CSV_HEADER


def test_full_run_summary_and_determinism(tmp_path):
    runs = []
    for k in range(2):
        cfg = parse_config(SMALL_GSR)
        cfg.out = tmp_path / f"run{k}"
        res = run_experiment(cfg, quiet=True)
        assert not res.failed
        runs.append(cfg.out)
    summary = read_rows(runs[0] / "summary.csv")
    for row in summary[1:]:
        assert row[1] != "" and int(row[1]) <= 3000  # every design stopped
        if row[0].startswith("OVDP"):
            assert float(row[4]) <= 1 + 1e-6
    for csv_path in sorted(runs[0].glob("*.csv")):
        a, b = read_rows(csv_path), read_rows(runs[1] / csv_path.name)
        drop = SUMMARY_HEADER.index("seconds_to_stop") if csv_path.name == "summary.csv" else CSV_HEADER.index("elapsed_s")
        assert [r[:drop] + r[drop + 1 :] for r in a] == [r[:drop] + r[drop + 1 :] for r in b]
    log = read_rows(runs[0] / "ASP.csv")
    assert log[1][2] != "" and log[1][4] != ""  # rmse and metric columns filled


def test_infeasible_oracle_marks_run_failed(tmp_path):
    cfg = parse_config(SMALL_GSR.replace("oracle_iters: 3000", "oracle_iters: 5").replace("[0, 1, 2]", "1"))
    cfg.out = tmp_path
    res = run_experiment(cfg, quiet=True)
    assert res.failed and res.notes[0].startswith("FAILED(pseudo-oracle")
    log = read_rows(tmp_path / "OVDP_beta=1.csv")
    assert log[1][2] == ""  # no rmse without an oracle


def test_capacity_skip_is_not_failure(tmp_path):
    cfg = parse_config("task: mnr\nparams: {dims: [4, 4, 3]}\ndesigns: [{type: ovdp, beta: 1}, {type: pdp, tau: 1}]\noracle_iters: 5000\nmax_iters: 50\nmaterialize_cap: 1000\n")
    cfg.out = tmp_path
    res = run_experiment(cfg, quiet=True)
    assert not res.failed, res.notes
    rows = read_rows(tmp_path / "summary.csv")
    assert rows[2][0].startswith("PDP") and rows[2][1].startswith("SKIPPED(")


def test_verify_experiment_checks():
    cfg = parse_config(SMALL_GSR)
    checks = verify_experiment(cfg, trials=5)
    assert checks and all(c.passed for c in checks)
    assert any(c.name == "cond OVDP(beta=1)" for c in checks)


# command line


def test_cli_run_exit_codes(tmp_path, capsys):
    good = write(tmp_path, SMALL_GSR.replace("[0, 1, 2]", "1"))
    assert main(["run", str(good), "--out", str(tmp_path / "o"), "--quiet", "--oracle-iters", "2000"]) == 0
    bad = write(tmp_path, "task: deblur\ndesigns: [asp]\n", "bad.yaml")
    assert main(["run", str(bad)]) == 2
    assert "field 'task'" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    assert main(["run", str(good), "--max-iters", "0"]) == 2


def test_cli_bad_arguments():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_seed_override(tmp_path):
    cfg_path = write(tmp_path, SMALL_GSR.replace("[0, 1, 2]", "1"))
    main(["run", str(cfg_path), "--out", str(tmp_path / "a"), "--seed", "5", "--quiet", "--oracle-iters", "50", "--max-iters", "50"])
    main(["run", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "6", "--quiet", "--oracle-iters", "50", "--max-iters", "50"])
    a, b = read_rows(tmp_path / "a" / "OVDP_beta=1.csv"), read_rows(tmp_path / "b" / "OVDP_beta=1.csv")
    assert a[1][:2] != b[1][:2]


def test_cli_verify_prints_condition(tmp_path, capsys):
    cfg_path = write(tmp_path, SMALL_GSR.replace("[0, 1, 2]", "1"))
    assert main(["verify", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if "OVDP(beta=1)" in l)
    assert line.startswith("PASS")


def test_cli_gen_gsr_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen", "gsr", "--n", "200", "--k", "6", "--seed", "7", "--out", str(tmp_path / name), "--quiet"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "graph.txt" in files and "observed.raw" in files and "observed.raw.json" in files
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    assert mismatch == [] and errors == []


def test_cli_gen_mnr_and_unmix(tmp_path):
    from ovdp.io import read_tensor

    assert main(["gen", "mnr", "--dims", "4", "4", "3", "--out", str(tmp_path / "m"), "--quiet"]) == 0
    data, dims = read_tensor(tmp_path / "m" / "observed.raw")
    assert dims == [4, 4, 3] and data.size == 48
    assert main(["gen", "unmix", "--pixels", "3", "3", "--bands", "5", "--endmembers", "2", "--out", str(tmp_path / "u"), "--quiet"]) == 0
    E, dims = read_tensor(tmp_path / "u" / "endmembers.raw")
    assert dims == [5, 2] and np.all(E >= 0)
    assert main(["gen", "gsr", "--n", "5", "--k", "5", "--out", str(tmp_path / "g"), "--quiet"]) == 2
