import numpy as np
import pytest

from stssl.cli import build_parser, main
from stssl.config import KEYS, ConfigError, parse_config
from stssl.evaluation import FeatureSet, export_embeddings, load_embeddings
from stssl.geometry import PointCloud
from stssl.io import load_cloud, load_cloud_dir, save_xyz
from stssl.model import load_checkpoint

TINY = """\
# tiny run for tests
steps = 3
batch_size = 4
warmup_epochs = 0
encoder_widths = 3, 8, 16
head_hidden = 8
projection_dim = 4
target_points = 32
checkpoint_every = 2
"""


class TestConfig:
    def test_defaults_echo_round_trip(self):
        cfg = parse_config("")
        assert parse_config(cfg.echo()) == cfg
        assert parse_config(cfg.echo()).echo() == cfg.echo()

    def test_values_parsed(self):
        cfg = parse_config(TINY + "use_scaling = false\nscale_range = 0.9, 1.1\ndtype = float32\n")
        assert cfg.train.steps == 3 and cfg.train.warmup_epochs == 0.0
        assert cfg.model.encoder_widths == (3, 8, 16) and cfg.model.dtype == "float32"
        assert cfg.sampler.temporal.use_scaling is False
        assert cfg.sampler.temporal.scale_range == (0.9, 1.1)
        assert parse_config(cfg.echo()) == cfg

    def test_every_key_in_echo(self):
        keys = [line.split(" = ")[0] for line in parse_config("").echo().splitlines()]
        assert sorted(keys) == sorted(KEYS)

    def test_overrides(self):
        assert parse_config("seed = 1", {"seed": 7}).train.seed == 7

    @pytest.mark.parametrize(
        "text, match",
        [
            ("learning_rate = 0.1", "unknown key"),
            ("steps: 4", "key = value"),
            ("steps = many", "bad value"),
            ("encoder_bn = maybe", "bad value"),
            ("batch_size = 1", "batch_size"),
        ],
    )
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)


@pytest.fixture
def shapes_dir(tmp_path):
    out = tmp_path / "shapes"
    assert main(["--seed", "1", "gen-data", "shapes", "--out", str(out), "--classes", "sphere,cone",
                 "--samples-per-class", "4", "--points", "64"]) == 0
    return out


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


class TestCli:
    def test_gen_data_writes_files(self, shapes_dir):
        clouds = load_cloud_dir(shapes_dir)
        assert len(list(shapes_dir.iterdir())) == 8
        assert sorted(c.label for c in clouds) == [0] * 4 + [1] * 4

    def test_gen_data_seeded(self, tmp_path, shapes_dir):
        main(["--seed", "1", "gen-data", "shapes", "--out", str(tmp_path / "again"), "--classes", "sphere,cone",
              "--samples-per-class", "4", "--points", "64"])
        for a, b in zip(sorted(shapes_dir.iterdir()), sorted((tmp_path / "again").iterdir())):
            assert a.read_bytes() == b.read_bytes()

    def test_gen_depth(self, tmp_path):
        assert main(["gen-data", "depth", "--out", str(tmp_path / "d"), "--frames", "3", "--sequences", "2"]) == 0
        assert len(list((tmp_path / "d" / "seq_001").glob("*.depth"))) == 3

    @pytest.mark.parametrize(
        "argv, seed",
        [(["--seed", "3", "grad-check"], 3), (["grad-check", "--seed", "4"], 4), (["grad-check"], None)],
    )
    def test_seed_position(self, argv, seed):
        args = build_parser().parse_args(argv)
        assert getattr(args, "seed", None) == seed

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["grad-check", "--no-such-flag"])
        assert exc.value.code == 2

    def test_unknown_config_key_exits_2(self, tmp_path, shapes_dir, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("steps = 2\nmomentum = 0.9\n")
        assert main(["pretrain", "--config", str(bad), "--data", str(shapes_dir), "--out", str(tmp_path / "o")]) == 2
        assert "unknown key 'momentum'" in capsys.readouterr().err

    def test_runtime_failure_exits_1(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert main(["embed", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path / "empty"),
                     "--out", str(tmp_path / "e.txt")]) == 1

    def test_probe_separable(self, tmp_path, rng, capsys):
        x = np.concatenate([rng.normal(size=(20, 3)) + 4, rng.normal(size=(20, 3)) - 4])
        export_embeddings(FeatureSet(x, np.repeat([0, 1], 20), 2), tmp_path / "e.txt")
        assert main(["probe", "--train-embeddings", str(tmp_path / "e.txt"),
                     "--test-embeddings", str(tmp_path / "e.txt")]) == 0
        assert capsys.readouterr().out.strip() == "accuracy=1.0"

    def test_probe_needs_inputs(self, capsys):
        assert main(["probe"]) == 2

    def test_augment_preview(self, tmp_path, rng):
        save_xyz(PointCloud(rng.normal(size=(200, 3)), 3), tmp_path / "in.xyz")
        args = ["--seed", "5", "augment-preview", "--input", str(tmp_path / "in.xyz")]
        assert main(args + ["--out", str(tmp_path / "a.xyz")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.xyz")]) == 0
        out = load_cloud(tmp_path / "a.xyz")
        assert len(out) == 512 and out.label == 3
        assert (tmp_path / "a.xyz").read_bytes() == (tmp_path / "b.xyz").read_bytes()
        np.testing.assert_allclose(np.linalg.norm(out.points, axis=1).max(), 1.0, atol=1e-9)

    def test_grad_check_small(self, capsys):
        assert main(["grad-check", "--trials", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("ok") for line in lines)

    def test_pretrain_embed_probe(self, tmp_path, shapes_dir, config_file, capsys):
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["--seed", "3", "pretrain", "--config", str(config_file), "--data", str(shapes_dir),
                         "--out", str(out)]) == 0
            runs.append(out)
        a, b = runs
        log = (a / "metrics.log").read_text().splitlines()
        assert [line.split()[0] for line in log] == ["1", "2", "3"]
        assert all(np.isfinite(float(v)) for line in log for v in line.split()[1:])
        for name in ("metrics.log", "encoder.ckpt", "state_final.ckpt", "state_000002.ckpt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        arrays, echo = load_checkpoint(a / "encoder.ckpt")
        assert "seed = 3" in echo and all(k.startswith("encoder.") for k in arrays)

        emb = tmp_path / "e.txt"
        assert main(["embed", "--checkpoint", str(a / "encoder.ckpt"), "--data", str(shapes_dir),
                     "--out", str(emb), "--points", "32"]) == 0
        fs = load_embeddings(emb)
        assert fs.features.shape == (8, 16)
        capsys.readouterr()
        assert main(["probe", "--checkpoint", str(a / "encoder.ckpt"), "--train-data", str(shapes_dir),
                     "--test-data", str(shapes_dir), "--fraction", "0.5"]) == 0
        acc = float(capsys.readouterr().out.strip().split("=")[1])
        assert 0.0 <= acc <= 1.0

    def test_pretrain_different_seed_differs(self, tmp_path, shapes_dir, config_file):
        for seed in ("3", "4"):
            main(["--seed", seed, "pretrain", "--config", str(config_file), "--data", str(shapes_dir),
                  "--out", str(tmp_path / seed)])
        assert (tmp_path / "3" / "metrics.log").read_bytes() != (tmp_path / "4" / "metrics.log").read_bytes()
