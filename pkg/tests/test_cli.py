import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from oglr import cli, image_io
from oglr.denoiser import OglrParams

FAST = ["--set", "schedule=20:7:5:2,40:8:6:3,60:9:8:4,inf:10:8:5", "--set", "search_radius=6",
        "--set", "max_iters=2", "--workers", "1"]


@pytest.fixture
def clean(tmp_path, lena):
    path = tmp_path / "clean.png"
    image_io.save_image(lena[100:140, 100:140], path)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("denoise", "synth", "metrics", "lab", "bench"):
        assert name in out


def test_missing_sigma_is_usage_error(clean, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("denoise", "--in", clean, "--out", tmp_path / "o.png")
    assert exc.value.code == 2
    assert "--sigma" in capsys.readouterr().err


def test_unknown_set_key(clean, tmp_path):
    assert run("denoise", "--in", clean, "--sigma", 20, "--out", tmp_path / "o.png",
               "--set", "bogus=1") == 2


def test_invalid_param_value(clean, tmp_path):
    assert run("denoise", "--in", clean, "--sigma", 20, "--out", tmp_path / "o.png",
               "--set", "c_i=2") == 2


def test_missing_input_is_runtime_error(tmp_path):
    assert run("denoise", "--in", tmp_path / "nope.png", "--sigma", 20,
               "--out", tmp_path / "o.png") == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("# tuning\ngamma = 0.2\nnu = 2.5\nc_i = 0.5\n")
    args = cli.make_parser().parse_args(
        ["denoise", "--in", "x", "--sigma", "1", "--out", "y", "--config", str(cfg),
         "--set", "nu=3", "--gamma", "0.9"])
    p = cli.build_params(args)
    defaults = OglrParams()
    assert (p.gamma, p.nu, p.c_i) == (0.9, 3.0, 0.5)
    assert p.sigma_th == defaults.sigma_th


def test_parse_assignments_errors():
    with pytest.raises(cli.UsageError, match="key = value"):
        cli.parse_assignments(["gamma"], "f")
    with pytest.raises(cli.UsageError, match="bad value"):
        cli.parse_assignments(["max_iters = two"], "f")
    with pytest.raises(cli.UsageError, match="schedule"):
        cli.parse_assignments(["schedule = 20:7:8"], "f")
    vals = cli.parse_assignments(["include-self = no", "search_radius = none"], "f")
    assert vals == {"include_self": False, "search_radius": None}


def test_workers_env(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    args = cli.make_parser().parse_args(["denoise", "--in", "x", "--sigma", "1", "--out", "y"])
    assert cli.build_params(args).workers == 2


def test_synth_zero_sigma(clean, tmp_path, capsys):
    out = tmp_path / "n.png"
    assert run("synth", "--in", clean, "--sigma", 0, "--out", out) == 0
    np.testing.assert_array_equal(image_io.load_image(out), image_io.load_image(clean))
    assert "inf" in capsys.readouterr().out


def test_synth_deterministic(clean, tmp_path):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    run("synth", "--in", clean, "--sigma", 25, "--seed", 3, "--out", a)
    run("synth", "--in", clean, "--sigma", 25, "--seed", 3, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    assert np.array_equal(np.load(tmp_path / "a.npy"), np.load(tmp_path / "b.npy"))


def test_synth_sigma40_psnr(tmp_path, capsys):
    src = tmp_path / "flat.png"
    image_io.save_image(np.full((512, 512), 128.0), src)
    run("synth", "--in", src, "--sigma", 40, "--seed", 0, "--out", tmp_path / "n.png")
    line = capsys.readouterr().out.splitlines()[0]
    assert abs(float(line.split()[1]) - 16.09) < 0.03


def test_denoise_happy_path(clean, tmp_path, capsys):
    noisy = tmp_path / "noisy.png"
    run("synth", "--in", clean, "--sigma", 20, "--seed", 1, "--out", noisy)
    out = tmp_path / "out.png"
    code = run("denoise", "--in", tmp_path / "noisy.npy", "--sigma", 20, "--out", out,
               "--ref", clean, *FAST)
    assert code == 0 and out.exists()
    rep = json.loads((tmp_path / "out.json").read_text())
    assert rep["psnr"] > 25 and 0 < rep["ssim"] <= 1
    assert len(rep["iterations"]) == 2
    assert "psnr" in capsys.readouterr().out


def test_denoise_csv_report(clean, tmp_path):
    rep = tmp_path / "r.csv"
    assert run("denoise", "--in", clean, "--sigma", 10, "--out", tmp_path / "o.pgm",
               "--report", rep, *FAST) == 0
    assert rep.read_text().startswith("iteration,")


def test_denoise_batch(clean, tmp_path):
    other = tmp_path / "other.png"
    image_io.save_image(np.flipud(image_io.load_image(clean)), other)
    out_dir = tmp_path / "batch"
    assert run("denoise", "--in", clean, other, "--sigma", 30, "--gamma", 0, "--out", out_dir,
               *FAST) == 0
    rows = list(csv.DictReader((out_dir / "report.csv").open()))
    assert [r["image"] for r in rows] == [str(clean), str(other)]
    assert all(float(r["gamma"]) == 0 for r in rows)
    assert (out_dir / "clean.png").exists() and (out_dir / "other.png").exists()


def test_denoise_deterministic(clean, tmp_path):
    for name in ("a", "b"):
        run("denoise", "--in", clean, "--sigma", 20, "--out", tmp_path / f"{name}.png", *FAST)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_metrics(clean, tmp_path, capsys):
    assert run("metrics", clean, clean) == 0
    out = capsys.readouterr().out
    assert "psnr inf" in out and "ssim 1.0000" in out


def test_gamma_sweep(tmp_path):
    d = tmp_path / "sweep"
    assert run("lab", "gamma-sweep", "--iters", 1, "--out-dir", d) == 0
    assert len(list(d.glob("*.png"))) == 6
    rows = list(csv.DictReader((d / "sharpness.csv").open()))
    assert len(rows) == 6 and {r["image"] for r in rows} == {"glow", "disk"}


def test_convergence_small_m(capsys):
    assert run("lab", "convergence", "--m", 10) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][-1] == "ratio" and np.isfinite(float(rows[1][-1]))


def test_convergence_csv(tmp_path):
    out = tmp_path / "c.csv"
    assert run("lab", "convergence", "--gamma", 1, "--m", 100, 200, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 3


def test_lab_requires_subcommand():
    with pytest.raises(SystemExit) as exc:
        run("lab")
    assert exc.value.code == 2


def test_bench(clean, tmp_path):
    out = tmp_path / "bench.csv"
    assert run("bench", "--images", clean, "--sigmas", 20, "--seeds", 0, 1, "--out", out,
               *FAST) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][:3] == ["image", "sigma", "seed"]
    assert [r[2] for r in rows[1:]] == ["0", "1", "mean"]


def test_console_script_module():
    res = subprocess.run([sys.executable, "-m", "oglr", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "denoise" in res.stdout
