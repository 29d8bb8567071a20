import json
import subprocess
import sys

import pytest

from adloco.cli import main
from adloco.config import ExperimentSpec, RunConfig
from adloco.experiment import (
    CSV_COLUMNS,
    ExperimentError,
    read_csv,
    resolve_out_dir,
    run_experiment,
)

SMALL = (
    "name = tiny\n"
    "seeds = 0, 1, 2\n"
    "num_outer_steps = 4\nnum_inner_steps = 5\nn_samples = 128\ndim = 4\neval_size = 32\n"
    "num_init_trainers = 3\nworkers_per_trainer = 2\nlr_inner = 0.01\n"
)


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(SMALL + "variant.ad.algorithm = adloco\nvariant.di.algorithm = diloco\n")
    return path


def test_two_variants_three_seeds(tmp_path, cfg_file):
    out = tmp_path / "out"
    assert main(["run", str(cfg_file), "--out", str(out)]) == 0
    files = sorted(p.name for p in (out / "tiny").iterdir())
    assert files == sorted([f"{v}_seed{s}.csv" for v in ("ad", "di") for s in (0, 1, 2)] + ["summary.json"])
    rows = read_csv(out / "tiny" / "ad_seed0.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [int(r["step"]) for r in rows][:3] == [0, 0, 0]
    summary = json.loads((out / "tiny" / "summary.json").read_text())
    assert set(summary["variants"]) == {"ad", "di"}
    assert len(summary["variants"]["ad"]["comm_to_target"]) == 3


def test_rerun_is_byte_identical(tmp_path, cfg_file):
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / name)]) == 0
    for path in (tmp_path / "a" / "tiny").iterdir():
        assert path.read_bytes() == (tmp_path / "b" / "tiny" / path.name).read_bytes()


def test_seed_and_variant_filters(tmp_path, cfg_file):
    out = tmp_path / "o"
    assert main(["run", str(cfg_file), "--out", str(out), "--seeds", "7", "--variant", "di"]) == 0
    assert sorted(p.name for p in (out / "tiny").iterdir()) == ["di_seed7.csv", "summary.json"]


def test_compare_reports_target_metrics(tmp_path, capsys):
    path = tmp_path / "c.cfg"
    path.write_text(SMALL)
    assert main(["compare", str(path), "--out", str(tmp_path), "--seeds", "0"]) == 0
    summary = json.loads((tmp_path / "tiny-compare" / "summary.json").read_text())
    assert set(summary["variants"]) == {"adloco", "diloco", "localsgd"}
    run = summary["runs"]["adloco_seed0"]
    assert {"steps_to_target", "comm_to_target", "target_loss"} <= set(run)
    assert "adloco" in capsys.readouterr().out


def test_ablate_and_theory(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text(SMALL.replace("num_outer_steps = 4", "num_outer_steps = 12"))
    assert main(["ablate", str(path), "--out", str(tmp_path), "--seeds", "0"]) == 0
    names = json.loads((tmp_path / "tiny-ablate" / "summary.json").read_text())["variants"]
    assert set(names) == {"full", "no_adaptive", "no_merging", "no_switch"}
    assert main(["theory", str(path), "--out", str(tmp_path), "--seeds", "0,1"]) == 0
    report = json.loads((tmp_path / "tiny-theory" / "summary.json").read_text())
    assert set(report["log_fit"]) == {"0", "1"}


def test_bad_config_exits_nonzero(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("eta = -1\n")
    assert main(["run", str(path), "--out", str(tmp_path)]) == 2
    assert "eta" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_unknown_variant(tmp_path, cfg_file):
    assert main(["run", str(cfg_file), "--out", str(tmp_path), "--variant", "zz"]) == 2


def test_unknown_subcommand_exits_nonzero():
    proc = subprocess.run([sys.executable, "-m", "adloco.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "invalid choice" in proc.stderr


def test_out_dir_precedence(monkeypatch, tmp_path):
    spec = ExperimentSpec(out_dir="from_config")
    assert str(resolve_out_dir(spec)) == "from_config"
    monkeypatch.setenv("ADLOCO_OUT_DIR", str(tmp_path / "env"))
    assert resolve_out_dir(spec) == tmp_path / "env"
    assert resolve_out_dir(spec, str(tmp_path / "flag")) == tmp_path / "flag"


def test_engine_failure_names_the_run(tmp_path, monkeypatch):
    from adloco import engine

    def boom(cfg):
        raise RuntimeError("kaboom")

    monkeypatch.setitem(engine.RUNNERS, "adloco", boom)
    spec = ExperimentSpec(name="x", base=RunConfig(num_outer_steps=1, num_inner_steps=1), seeds=(3,))
    with pytest.raises(ExperimentError, match="seed 3"):
        run_experiment(spec, str(tmp_path))


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
