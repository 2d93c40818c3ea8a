import json

import numpy as np
import pytest

from conftest import make_trial

from smartmrt.cli import main
from smartmrt.design import TrialData
from smartmrt.io import write_trial_csv
from smartmrt.model import example1_spec
from smartmrt.sim import SimConfig, rep_rng, simulate_one


def test_simulate_report_truth_round(tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert main(["simulate", "--scenario", "2", "--n", "40", "--reps", "2", "--seed", "1",
                 "--out", str(out), "--dump-data", str(tmp_path / "data")]) == 0
    assert out.exists() and len(list((tmp_path / "data").glob("rep*.csv"))) == 2
    assert main(["report", "--in", str(out), "--format", "md"]) == 0
    assert "| Stage | Contrast | True |" in capsys.readouterr().out
    assert main(["truth", "--scenario", "1", "--out", str(tmp_path / "t.csv")]) == 0
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 30 and lines[0].startswith("key,")


def test_simulate_is_byte_deterministic(tmp_path):
    args = ["simulate", "--scenario", "1", "--n", "30", "--reps", "4", "--seed", "3"]
    main(args + ["--out", str(tmp_path / "a.csv")])
    main(args + ["--out", str(tmp_path / "b.csv"), "--jobs", "2"])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_analyze_cli(tmp_path, capsys):
    cfg = SimConfig(n=50)
    data = simulate_one(cfg, rep_rng(0, 0))
    write_trial_csv(data, tmp_path / "d.csv")
    config = {"design": cfg.design().to_dict(), "model": example1_spec().to_dict(),
              "contrasts": [{"kind": "AA", "t": 20, "label": "avg"}]}
    (tmp_path / "c.json").write_text(json.dumps(config))
    assert main(["analyze", "--data", str(tmp_path / "d.csv"), "--config",
                 str(tmp_path / "c.json"), "--out", str(tmp_path / "r.json")]) == 0
    assert capsys.readouterr().out.startswith("avg:")
    assert (tmp_path / "r.md").exists()


def test_exit_code_validation(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("id,t\n1,1\n")
    (tmp_path / "c.json").write_text(json.dumps({"model": {"f": ["1"], "m": ["1"]}}))
    code = main(["analyze", "--data", str(tmp_path / "d.csv"), "--config",
                 str(tmp_path / "c.json"), "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "missing mandatory column" in capsys.readouterr().err
    assert main(["report", "--in", str(tmp_path / "nope.csv")]) == 2


def test_exit_code_numerical(tmp_path, capsys):
    # a constant covariate vanishes once centered, leaving a zero column
    data, design = make_trial(n=20)
    const = TrialData(data.ids, data.pid, data.t, data.z1, data.r, data.z2, data.i, data.a,
                      data.p, data.y, np.ones_like(data.x), data.x_names)
    write_trial_csv(const, tmp_path / "d.csv")
    config = {"design": design.to_dict(),
              "model": {"f": ["1"], "m": ["1", "d1"], "g": ["x(state)"]}}
    (tmp_path / "c.json").write_text(json.dumps(config))
    code = main(["analyze", "--data", str(tmp_path / "d.csv"), "--config",
                 str(tmp_path / "c.json"), "--out", str(tmp_path / "r.json")])
    assert code == 3
    assert "numerical" in capsys.readouterr().err


def test_argparse_rejects_bad_scenario():
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--scenario", "3", "--out", "x"])
    assert info.value.code == 2
