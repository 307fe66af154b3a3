"""Command-line surface: exit codes, file outputs, subcommand wiring."""

import pytest

from nightseg.cli import main
from nightseg.netpbm import read_ppm


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    assert main(["gen-data", "--out", str(root), "--count", "8", "--seed", "5"]) == 0
    return root


class TestDispatch:
    def test_unknown_subcommand_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--out", "x", "--frodo", "1"])
        assert exc.value.code == 2

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for cmd in ("gen-data", "phase-extract", "train", "eval", "ablate",
                    "grad-check", "selftest"):
            assert cmd in out


class TestGenData:
    def test_writes_expected_files(self, dataset):
        assert (dataset / "manifest.txt").exists()
        assert len(list(dataset.glob("img_*.ppm"))) == 8
        assert len(list(dataset.glob("msk_*.pgm"))) == 8


class TestPhaseExtract:
    def test_phase_mode_writes_texture(self, dataset, tmp_path):
        out = tmp_path / "tex.ppm"
        rc = main(["phase-extract", "--in", str(dataset / "img_00000.ppm"),
                   "--out", str(out)])
        assert rc == 0
        tex = read_ppm(out.read_bytes())
        assert tex.shape == (32, 64, 3)

    def test_sobel_mode_and_c_a_override(self, dataset, tmp_path):
        out = tmp_path / "tex_sobel.ppm"
        assert main(["phase-extract", "--in", str(dataset / "img_00001.ppm"),
                     "--out", str(out), "--mode", "sobel"]) == 0
        out2 = tmp_path / "tex_ca.ppm"
        assert main(["phase-extract", "--in", str(dataset / "img_00001.ppm"),
                     "--out", str(out2), "--c-a", "2.0"]) == 0
        assert out.exists() and out2.exists()


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(
        "train.iters = 6\n"
        "train.batch = 2\n"
        "train.seed = 1\n"
        "train.log_every = 2\n"
        "backbone.widths = 4 5 6 7\n"
        "phase_enc.widths = 3 4 5 6\n"
        "decoder.channels = 8\n"
        "matcher.prototypes = 4\n"
        "matcher.reliable_k = 4\n"
        "matcher.layers = 1\n",
        encoding="utf-8",
    )
    return path


class TestTrainEvalCli:
    def test_train_then_eval(self, dataset, tiny_cfg, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--config", str(tiny_cfg), "--data", str(dataset),
                     "--out", str(run)]) == 0
        assert (run / "checkpoint" / "params.txt").exists()
        assert (run / "train_log.txt").exists()
        report = tmp_path / "report.txt"
        assert main(["eval", "--ckpt", str(run / "checkpoint"), "--config", str(tiny_cfg),
                     "--data", str(dataset), "--report", str(report)]) == 0
        lines = report.read_text().strip().splitlines()
        assert lines[-1].startswith("miou ")

    def test_ablate_matcher_two_rows(self, dataset, tiny_cfg, tmp_path, capsys):
        report = tmp_path / "ablate.txt"
        assert main(["ablate", "--axis", "matcher", "--config", str(tiny_cfg),
                     "--data", str(dataset), "--report", str(report)]) == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "axis matcher"
        assert lines[1] == "setting miou"
        assert lines[2].startswith("vanilla_attention ")
        assert lines[3].startswith("reliable_attention ")
        for row in lines[2:]:
            float(row.split()[1])


class TestVerificationCli:
    def test_grad_check_exit_0(self, capsys):
        assert main(["grad-check"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_selftest_exit_0(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "properties passed" in out
