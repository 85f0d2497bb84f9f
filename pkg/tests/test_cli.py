import csv

import numpy as np
import pytest

from vxc.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, SEED_ENV, default_seed, main
from vxc.codec import Bitstream
from vxc.data import read_manifest, read_ppm, read_vox
from vxc.exceptions import ConfigurationError
from vxc.trainer import checkpoint_path

TINY = ["--image-size", "16", "--d-out", "8", "--K", "6", "--n-hidden", "3", "--n-pools", "2",
        "--n-iter-max", "2", "--v-max", "2", "--batch-size", "2", "--epochs", "1", "--seed", "3"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--out", str(data), "--train", "3", "--test", "2", "--views", "2", "--size", "16",
                 "--grid", "8", "--seed", "4"]) == EXIT_OK
    runs = {}
    for kind in ("sequential", "implicit"):
        out = root / kind
        assert main(["train", "--model", kind, "--out", str(out), "--data", str(data)] + TINY) == EXIT_OK
        runs[kind] = checkpoint_path(out, 1)
    return root, data, runs


class TestGenData:
    def test_writes_manifest_and_echo(self, workspace):
        _, data, _ = workspace
        m = read_manifest(data)
        assert (m.n_views, m.D, m.height) == (2, 8, 16)
        assert "views = 2" in (data / "effective_config.txt").read_text()

    def test_non_empty_directory(self, workspace, capsys):
        _, data, _ = workspace
        assert main(["gen-data", "--out", str(data), "--train", "1", "--test", "1"]) == EXIT_USAGE
        assert "error" in capsys.readouterr().err

    def test_default_corpus_split(self, desk_corpus):
        m = read_manifest(desk_corpus)
        assert (len(m.split("train")), len(m.split("test"))) == (64, 16)
        assert (m.n_views, m.height, m.width, m.D) == (5, 32, 32, 32)

    def test_same_seed_same_hash(self, tmp_path, capsys):
        args = ["--train", "2", "--test", "1", "--views", "1", "--size", "16", "--grid", "8", "--seed", "5"]
        assert main(["gen-data", "--out", str(tmp_path / "a")] + args) == EXIT_OK
        assert main(["gen-data", "--out", str(tmp_path / "b")] + args) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split()[-1] == lines[1].split()[-1]

    def test_zero_views(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "d"), "--views", "0"]) == EXIT_USAGE

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--out", str(tmp_path), "--colour"])
        assert exc.value.code == EXIT_USAGE


class TestSeed:
    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "9")
        assert default_seed(4) == 4

    def test_environment_fallback(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "9")
        assert default_seed(None) == 9
        monkeypatch.delenv(SEED_ENV)
        assert default_seed(None) == 0

    def test_bad_environment_value(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "nine")
        with pytest.raises(ConfigurationError):
            default_seed(None)

    def test_gen_data_reads_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "11")
        args = ["--train", "1", "--test", "1", "--views", "1", "--size", "16", "--grid", "8"]
        assert main(["gen-data", "--out", str(tmp_path / "a")] + args) == EXIT_OK
        assert read_manifest(tmp_path / "a").seed == 11


class TestTrain:
    def test_outputs(self, workspace):
        root, _, runs = workspace
        assert runs["sequential"].exists()
        echo = (root / "sequential" / "effective_config.txt").read_text()
        assert "model = sequential" in echo and "image_size = 16" in echo
        assert (root / "sequential" / "metrics.csv").exists()

    def test_resume_continues(self, workspace, tmp_path, capsys):
        _, data, _ = workspace
        args = ["train", "--model", "implicit", "--out", str(tmp_path), "--data", str(data)] + TINY
        assert main(args) == EXIT_OK
        assert main(args[:-6] + ["--epochs", "2", "--seed", "3", "--resume"]) == EXIT_OK
        assert "resumed at epoch 1" in capsys.readouterr().out
        assert checkpoint_path(tmp_path, 2).exists()

    def test_config_file_and_override(self, workspace, tmp_path):
        _, data, _ = workspace
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"data = {data}\nepochs = 5\nimage_size = 16\n")
        args = ["train", "--model", "implicit", "--out", str(tmp_path / "r"), "--config", str(cfg)] + TINY
        assert main(args) == EXIT_OK
        assert "epochs = 1" in (tmp_path / "r" / "effective_config.txt").read_text()

    def test_unknown_config_key(self, workspace, tmp_path):
        _, data, _ = workspace
        cfg = tmp_path / "run.cfg"
        cfg.write_text("learning_rate = 0.1\n")
        args = ["train", "--model", "implicit", "--out", str(tmp_path / "r"), "--config", str(cfg),
                "--data", str(data)]
        assert main(args) == EXIT_USAGE

    def test_bad_value(self, workspace, tmp_path):
        _, data, _ = workspace
        args = ["train", "--model", "implicit", "--out", str(tmp_path), "--data", str(data), "--epochs", "x"]
        assert main(args) == EXIT_USAGE

    def test_missing_data(self, tmp_path, capsys):
        missing = tmp_path / "none"
        args = ["train", "--model", "implicit", "--out", str(tmp_path), "--data", str(missing)] + TINY
        assert main(args) == EXIT_FAIL
        assert str(missing) in capsys.readouterr().err


class TestCodecCommands:
    def test_round_trip(self, workspace, tmp_path):
        _, data, runs = workspace
        src = sorted((data / "test").glob("*.ppm"))[:2]
        ck = str(runs["sequential"])
        assert main(["compress", "--checkpoint", ck, "--out", str(tmp_path / "c")] + [str(s) for s in src]) == 0
        streams = sorted((tmp_path / "c").glob("*.vxc"))
        assert len(streams) == 2
        bs = Bitstream.load(streams[0])
        assert (bs.height, bs.width, bs.N) == (16, 16, 2)
        assert main(["decompress", "--checkpoint", ck, "--out", str(tmp_path / "d")]
                    + [str(s) for s in streams]) == EXIT_OK
        img = read_ppm(tmp_path / "d" / (streams[0].stem + ".ppm"))
        assert img.shape == (16, 16, 3)
        # decoding a prefix also works
        assert main(["decompress", "--checkpoint", ck, "--out", str(tmp_path / "p"), "--n-iter", "1",
                     str(streams[0])]) == EXIT_OK

    def test_prefix_out_of_range(self, workspace, tmp_path):
        _, data, runs = workspace
        src = str(sorted((data / "test").glob("*.ppm"))[0])
        ck = str(runs["sequential"])
        assert main(["compress", "--checkpoint", ck, "--out", str(tmp_path), src]) == EXIT_OK
        stream = str(next(tmp_path.glob("*.vxc")))
        assert main(["decompress", "--checkpoint", ck, "--out", str(tmp_path), "--n-iter", "3", stream]) == 2

    def test_implicit_has_no_codec(self, workspace, tmp_path):
        _, data, runs = workspace
        src = str(sorted((data / "test").glob("*.ppm"))[0])
        assert main(["compress", "--checkpoint", str(runs["implicit"]), "--out", str(tmp_path), src]) == EXIT_USAGE

    def test_kind_mismatch(self, workspace, tmp_path):
        _, data, runs = workspace
        src = str(sorted((data / "test").glob("*.ppm"))[0])
        args = ["compress", "--checkpoint", str(runs["sequential"]), "--model", "direct", "--out", str(tmp_path)]
        assert main(args + [src]) == EXIT_USAGE

    def test_corrupt_stream(self, workspace, tmp_path):
        _, _, runs = workspace
        bad = tmp_path / "bad.vxc"
        bad.write_bytes(b"VXC1\x01")
        assert main(["decompress", "--checkpoint", str(runs["sequential"]), "--out", str(tmp_path),
                     str(bad)]) == EXIT_FAIL

    def test_missing_checkpoint(self, tmp_path):
        assert main(["decompress", "--checkpoint", str(tmp_path / "x.vxck"), "--out", str(tmp_path), "a"]) == 1


class TestReconstructAndEval:
    def test_reconstruct_from_dataset(self, workspace, tmp_path):
        _, data, runs = workspace
        args = ["reconstruct", "--checkpoint", str(runs["implicit"]), "--out", str(tmp_path), "--data", str(data),
                "--n-views", "2", "--probabilities"]
        assert main(args) == EXIT_OK
        ids = [e.id for e in read_manifest(data).split("test")]
        for name in ids:
            grid = read_vox(tmp_path / f"{name}.vox")
            p = read_vox(tmp_path / f"{name}_p.vox")
            assert grid.shape == (8, 8, 8) and grid.dtype == bool
            np.testing.assert_array_equal(grid, p > 0.4)

    def test_reconstruct_from_views(self, workspace, tmp_path):
        _, data, runs = workspace
        views = [str(p) for p in sorted((data / "test").glob("*.ppm"))[:2]]
        args = ["reconstruct", "--checkpoint", str(runs["sequential"]), "--out", str(tmp_path), "--views"] + views
        assert main(args) == EXIT_OK
        assert read_vox(tmp_path / "recon.vox").shape == (8, 8, 8)

    def test_reconstruct_needs_input(self, workspace, tmp_path):
        _, _, runs = workspace
        assert main(["reconstruct", "--checkpoint", str(runs["implicit"]), "--out", str(tmp_path)]) == EXIT_USAGE

    def test_eval_reports(self, workspace, tmp_path):
        _, data, runs = workspace
        args = ["eval", "--checkpoint", str(runs["sequential"]), "--out", str(tmp_path), "--data", str(data),
                "--n-views", "2", "--bins"]
        assert main(args) == EXIT_OK
        with open(tmp_path / "eval.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert (tmp_path / "eval.svg").exists() and (tmp_path / "significance_bins.csv").exists()

    def test_eval_rate_out_of_range(self, workspace, tmp_path):
        _, data, runs = workspace
        args = ["eval", "--checkpoint", str(runs["sequential"]), "--out", str(tmp_path), "--data", str(data),
                "--rates", "3"]
        assert main(args) == EXIT_USAGE

    def test_eval_bad_rate_list(self, workspace, tmp_path):
        _, data, runs = workspace
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--checkpoint", str(runs["sequential"]), "--out", str(tmp_path), "--data", str(data),
                  "--rates", "a,b"])
        assert exc.value.code == EXIT_USAGE


class TestDiagnostics:
    def test_gradcheck(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path)]) == EXIT_OK
        assert "checks passed" in capsys.readouterr().out
        with open(tmp_path / "gradcheck.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and all(r["passed"] == "1" for r in rows)

    def test_bench(self, tmp_path):
        args = ["bench", "--iters", "2", "--warmup", "0", "--n-views", "1", "--n-iter", "1", "--out", str(tmp_path)]
        assert main(args) == EXIT_OK
        with open(tmp_path / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["model"] for r in rows} == {"sequential", "direct", "implicit", "bare3d"}
        assert all(r["iters"] == "2" for r in rows)
        assert "speed-up" in (tmp_path / "bench.txt").read_text()

    def test_no_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == EXIT_USAGE
