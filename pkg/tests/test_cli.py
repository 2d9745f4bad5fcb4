import csv

import numpy as np
import pytest

from grind.cli import build_parser, main
from grind.pipeline import mse, read_reports
from grind.storage import load_model, read_dataset


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def adv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "adv"
    assert run("generate", "--system", "advection", "--resolution", 32, "--points", 300,
               "--frames", 20, "--seed", 7, "--out", path) == 0
    return path


def test_generate_round_trip(adv, capsys, tmp_path):
    ds = read_dataset(adv)
    assert ds.system == "advection"
    assert len(ds.run.frames) == 20 and ds.points.shape == (300, 2)
    assert ds.run.seed == 7
    # rerunning writes identical bytes
    assert run("generate", "--system", "advection", "--resolution", 32, "--points", 300,
               "--frames", 20, "--seed", 7, "--out", tmp_path / "again") == 0
    assert (tmp_path / "again" / "payload.bin").read_bytes() == (adv / "payload.bin").read_bytes()
    assert (tmp_path / "again" / "manifest.txt").read_bytes() == (adv / "manifest.txt").read_bytes()
    assert "generated advection: 20 frames, 300 points" in capsys.readouterr().out


def test_generate_defaults_to_900_points():
    parser, _ = build_parser()
    args = parser.parse_args(["generate", "--out", "x"])
    assert args.points == 900
    args = parser.parse_args(["rollout"])
    assert args.horizon == 16


def test_generate_rejects_zero_points(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("generate", "--points", 0, "--out", tmp_path / "x")
    assert exc.value.code != 0
    assert "--points" in capsys.readouterr().err


def test_generate_rejects_unknown_system(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("generate", "--system", "heat", "--out", tmp_path / "x")
    assert exc.value.code != 0


def test_missing_output_is_an_error(capsys):
    assert run("generate") == 1
    assert "--out" in capsys.readouterr().err


def test_bad_param_is_an_error(tmp_path, capsys):
    assert run("generate", "--param", "D=-1", "--system", "diffusion", "--out", tmp_path / "x") == 1
    assert "--param" in capsys.readouterr().err


def test_persistence_rollout_matches_definition(adv, tmp_path):
    out = tmp_path / "p.csv"
    assert run("rollout", "--data", adv, "--model", "persistence", "--horizon", 5, "--out", out) == 0
    (report,) = read_reports(out)
    obs = read_dataset(adv).observations
    expected = [mse(obs[0].values, obs[t].values) for t in range(1, 6)]
    assert report.per_step_mse == expected
    assert report.model == "persistence" and report.seed == 7


def test_analytic_rollout_beats_persistence(adv, tmp_path, capsys):
    out = tmp_path / "a.csv"
    assert run("rollout", "--data", adv, "--model", "analytic", "--grid", 32, "--n-freq", 9, "--out", out) == 0
    reports = {r.model: r for r in read_reports(out)}
    assert set(reports) == {"grind-analytic", "persistence"}
    assert reports["grind-analytic"].horizon == 16
    assert reports["grind-analytic"].per_step_mse[-1] < reports["persistence"].per_step_mse[-1]
    assert "step 16 mse" in capsys.readouterr().out


def test_rollout_horizon_too_long(adv, tmp_path, capsys):
    assert run("rollout", "--data", adv, "--horizon", 25, "--out", tmp_path / "x.csv") == 1
    assert "frames" in capsys.readouterr().err


def test_fit_recovers_velocity(adv, tmp_path, capsys):
    out = tmp_path / "model"
    assert run("fit", "--data", adv, "--out", out) == 0
    lines = capsys.readouterr().out.splitlines()
    for name in ("centered_x[0]", "centered_y[0]"):
        (line,) = [ln for ln in lines if f" {name} " in ln]
        assert float(line.split()[-1].rstrip("%")) < 5.0
    model = load_model(out)
    assert model.weights.tobytes() == load_model(out).weights.tobytes()

    csv_out = tmp_path / "fitted.csv"
    assert run("rollout", "--data", adv, "--model", out, "--grid", 32, "--n-freq", 9, "--out", csv_out) == 0
    reports = {r.model: r for r in read_reports(csv_out)}
    assert reports["grind-fitted"].per_step_mse[-1] < reports["persistence"].per_step_mse[-1]


def test_fit_on_zero_data(tmp_path):
    data = tmp_path / "zero"
    # no transport: every frame equals the first, so the labels vanish
    assert run("generate", "--system", "advection", "--param", "c_x=0", "--param", "c_y=0",
               "--resolution", 8, "--points", 10, "--frames", 4, "--out", data) == 0
    assert run("fit", "--data", data, "--ridge", 1e-3, "--out", tmp_path / "m") == 0
    assert not np.any(load_model(tmp_path / "m").weights)


def test_fit_needs_three_frames(tmp_path, capsys):
    data = tmp_path / "short"
    assert run("generate", "--resolution", 8, "--points", 10, "--frames", 2, "--out", data) == 0
    assert run("fit", "--data", data, "--out", tmp_path / "m") == 1
    assert "3 frames" in capsys.readouterr().err


def test_missing_dataset(tmp_path, capsys):
    assert run("fit", "--data", tmp_path / "nope", "--out", tmp_path / "m") == 1
    assert "cannot read dataset" in capsys.readouterr().err


def test_interp_sweep_rows(tmp_path, capsys):
    data = tmp_path / "d"
    assert run("generate", "--resolution", 32, "--points", 200, "--frames", 2, "--out", data) == 0
    out = tmp_path / "sweep.csv"
    assert run("interp-sweep", "--data", data, "--out", out) == 0
    rows = read_csv(out)
    assert [int(r["n_freq"]) for r in rows] == list(range(3, 26))
    assert all(r["system"] == "advection" and r["n_points"] == "200" for r in rows)
    best = min(rows, key=lambda r: float(r["mse"]))
    assert f"n_freq={best['n_freq']}" in capsys.readouterr().out


def test_interp_sweep_empty_range(tmp_path, capsys):
    assert run("interp-sweep", "--freq-min", 9, "--freq-max", 5, "--out", tmp_path / "s.csv") == 1
    assert "empty frequency range" in capsys.readouterr().err


def test_report_empty_input(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("system,model,step,mse,seed\n")
    assert run("report", "--inputs", empty, "--out", tmp_path / "s.csv") == 1
    assert "no rows" in capsys.readouterr().err


def write_rollout(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system", "model", "step", "mse", "seed"])
        writer.writerows(rows)


def test_report_two_single_row_inputs(tmp_path):
    write_rollout(tmp_path / "a.csv", [("advection", "persistence", 1, "0.125", 0)])
    write_rollout(tmp_path / "b.csv", [("wave", "persistence", 1, "0.375", 0)])
    out = tmp_path / "summary.csv"
    assert run("report", "--inputs", tmp_path / "a.csv", tmp_path / "b.csv", "--out", out) == 0
    rows = read_csv(out)
    assert [(r["system"], float(r["mse_step_1"]), float(r["mse_step_last"])) for r in rows] == [
        ("advection", 0.125, 0.125), ("wave", 0.375, 0.375)]


def test_report_mean_over_seeds(tmp_path):
    write_rollout(tmp_path / "r.csv", [
        ("advection", "grind-fitted", 1, "0.1", 0), ("advection", "grind-fitted", 2, "0.3", 0),
        ("advection", "grind-fitted", 1, "0.2", 1), ("advection", "grind-fitted", 2, "0.7", 1),
        ("advection", "grind-fitted", 1, "0.6", 2), ("advection", "grind-fitted", 2, "0.2", 2),
    ])
    out = tmp_path / "summary.csv"
    assert run("report", "--inputs", tmp_path / "r.csv", "--out", out) == 0
    (row,) = read_csv(out)
    assert row["n_seeds"] == "3" and row["horizon"] == "2"
    assert float(row["mse_step_1"]) == pytest.approx((0.1 + 0.2 + 0.6) / 3, rel=1e-15)
    assert float(row["mse_step_last"]) == pytest.approx((0.3 + 0.7 + 0.2) / 3, rel=1e-15)


def test_report_sweep_summary(tmp_path):
    sweep = tmp_path / "sweep.csv"
    with open(sweep, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system", "n_points", "n_freq", "mse"])
        writer.writerows([("advection", 900, 3, "0.5"), ("advection", 900, 4, "0.1"), ("advection", 900, 5, "0.2")])
    out = tmp_path / "summary.csv"
    assert run("report", "--inputs", sweep, "--out", out) == 0
    (row,) = read_csv(str(out) + ".sweep.csv")
    assert row["best_n_freq"] == "4" and float(row["best_mse"]) == 0.1


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# generate settings\nresolution = 8\npoints = 12\nframes = 3\nseed = 5\n", encoding="utf-8")
    assert run("generate", "--config", cfg, "--points", 20, "--out", tmp_path / "d") == 0
    ds = read_dataset(tmp_path / "d")
    assert ds.points.shape[0] == 20  # flag wins
    assert ds.run.seed == 5 and len(ds.run.frames) == 3  # config applies


def test_config_bad_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("resolution = 8\nbogus_key = 1\n", encoding="utf-8")
    with pytest.raises(SystemExit) as exc:
        run("generate", "--config", cfg, "--out", tmp_path / "d")
    assert exc.value.code != 0
    assert "bogus_key" in capsys.readouterr().err


def test_config_bad_value(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("points = 0\n", encoding="utf-8")
    with pytest.raises(SystemExit):
        run("generate", "--config", cfg, "--out", tmp_path / "d")
    assert "points" in capsys.readouterr().err


def test_workers_env_validated(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GRIND_WORKERS", "zero")
    assert run("generate", "--resolution", 8, "--points", 5, "--frames", 2, "--out", tmp_path / "d") == 1
    assert "GRIND_WORKERS" in capsys.readouterr().err
