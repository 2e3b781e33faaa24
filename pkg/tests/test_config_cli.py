import csv

import numpy as np
import pytest

from idpseg.cli import EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, main
from idpseg.config import (
    ConfigError,
    PipelineConfig,
    dump_config,
    parse_config,
    parse_config_text,
)
from idpseg.core import load_sequence, read_image


def test_empty_config_is_defaults(tmp_path):
    (tmp_path / "c.toml").write_text("")
    assert parse_config(tmp_path / "c.toml") == PipelineConfig()
    assert parse_config(None) == PipelineConfig()


def test_constraint_error_names_section():
    with pytest.raises(ConfigError, match="alm: rho must exceed 1"):
        parse_config_text("alm.rho = 0.5\n")


def test_unknown_key():
    with pytest.raises(ConfigError, match="unknown key: alm.lambda_"):
        parse_config_text("alm.lambda_ = 1\n")


def test_type_errors():
    with pytest.raises(ConfigError):
        parse_config_text('alm.max_iters = "many"\n')
    with pytest.raises(ConfigError):
        parse_config_text("io.bit_depth = 12\n")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config_text("alm.rho = = 2\n")


def test_dump_round_trip():
    cfg = parse_config_text(
        "alm.lam = 0.02\ngfl.gamma = 1.5\nsegment.fusion = \"max-abs\"\nsynth.noise_correlated = true\n"
        "synth.radius_min = 1.5\nseed = 9\n"
    )
    assert cfg.alm.lam == 0.02 and cfg.gfl.gamma == 1.5 and cfg.synth.seed == 9
    assert parse_config_text(dump_config(cfg)) == cfg
    assert parse_config_text(dump_config()) == PipelineConfig()


def test_auto_keys():
    cfg = parse_config_text('alm.lam = "auto"\ngfl.sigma = "auto"\n')
    assert cfg.alm.lam is None and cfg.gfl.sigma is None


def test_no_subcommand(capsys):
    assert main([]) == EXIT_USAGE


def test_bad_flag():
    assert main(["segment", "--bogus"]) == EXIT_USAGE


def test_help_lists_keys(capsys):
    assert main(["--help"]) == EXIT_OK
    out = capsys.readouterr().out
    for key in ("alm.rho", "gfl.gamma", "optics.inv_reg", "segment.fusion"):
        assert key in out
    assert "λ" in out and "ρ" in out


def test_missing_input_is_data_error(tmp_path):
    assert main(["segment", "--in", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_bad_config_is_usage_error(tmp_path):
    (tmp_path / "c.toml").write_text("alm.rho = 0.5\n")
    code = main(["decompose", "--config", str(tmp_path / "c.toml"), "--in", str(tmp_path), "--out", str(tmp_path)])
    assert code == EXIT_USAGE


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.toml"
    cfg.write_text("synth.width = 32\nsynth.height = 32\nsynth.n_frames = 6\nsynth.cell_count = 2\n")
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == EXIT_OK
    return root, cfg


def test_synth_layout(small_data):
    root, _ = small_data
    for name in ("observed", "truth_bg", "truth_fg", "truth_masks"):
        assert len(list((root / "data" / name).glob("*.pgm"))) == 6
    assert (root / "data" / "manifest.json").exists()


def test_segment_layout_and_eval(small_data):
    root, cfg = small_data
    out = root / "seg"
    code = main(["segment", "--config", str(cfg), "--in", str(root / "data" / "observed"),
                 "--out", str(out), "--truth", str(root / "data" / "truth_masks")])
    assert code == EXIT_OK
    assert len(list((out / "masks").glob("frame_*.pgm"))) == 6
    assert sorted(p.name for p in (out / "restored").iterdir()) == [f"phase_{m}" for m in range(1, 9)]
    with (out / "diag.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and set(rows[0]) == {"frame", "threshold", "cell_count", "total_area"}
    with (out / "eval.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[-1][0] == "mean" and float(rows[-1][-1]) >= 0.9

    report = root / "report.csv"
    assert main(["eval", "--masks", str(out / "masks"), "--truth", str(root / "data" / "truth_masks"),
                 "--out", str(report)]) == EXIT_OK
    assert report.read_text().splitlines()[0] == "frame,tp,fp,tn,fn,acc"


def test_decompose_then_restore(small_data):
    root, cfg = small_data
    out = root / "dec"
    assert main(["decompose", "--config", str(cfg), "--in", str(root / "data" / "observed"),
                 "--out", str(out)]) == EXIT_OK
    assert load_sequence(out / "background").n_frames == 6
    assert main(["restore", "--in", str(out / "decomposition.npz"), "--out", str(root / "res")]) == EXIT_OK
    responses = np.load(root / "res" / "responses.npy")
    assert responses.shape == (6, 8, 32, 32)
    assert main(["restore", "--in", str(out / "foreground"), "--out", str(root / "res2")]) == EXIT_OK


def test_iteration_cap_exit_code(small_data):
    root, _ = small_data
    cfg = root / "capped.toml"
    cfg.write_text("alm.max_iters = 2\n")
    out = root / "capped"
    code = main(["decompose", "--config", str(cfg), "--in", str(root / "data" / "observed"), "--out", str(out)])
    assert code == EXIT_NOT_CONVERGED
    with (out / "diag.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and all(r["converged"] == "0" for r in rows)
    assert (out / "foreground").is_dir()


def test_dump_bank(tmp_path):
    assert main(["dump-bank", "--out", str(tmp_path)]) == EXIT_OK
    assert read_image(tmp_path / "psf_1.pgm").shape == (17, 17)
    assert (tmp_path / "inverse_8.pgm").exists()
    lines = (tmp_path / "taps.csv").read_text().splitlines()
    assert lines[0] == "kind,phase_index,theta,row,col,value"
    assert len(lines) == 1 + 2 * 8 * 17 * 17


def test_bench_command(small_data):
    root, cfg = small_data
    out = root / "bench.csv"
    assert main(["bench", "--config", str(cfg), "--reps", "1", "--out", str(out)]) == EXIT_OK
    assert "restore" in out.read_text()
