import os

import numpy as np
import pytest

from gasp import formats
from gasp.cli import load_dataset, main
from gasp.config import apply_overrides, read_config
from gasp.errors import ConfigError
from gasp.pointcloud import PointCloud, sinusoid_dataset
from gasp.presets import toy_defaults

SMALL = """
[generator]
fourier_m = 4
hidden_dims = 8
latent_dim = 4
hyper_hidden = 8
[discriminator]
channels = 2, 4
weight_hidden = 4
[training]
batch_size = 2   # tiny
"""


def run(argv, capsys=None):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    return code


def write_points(directory, n=6, points=16):
    os.makedirs(directory, exist_ok=True)
    for i, pc in enumerate(sinusoid_dataset(n, points, seed=0)):
        formats.write_csv_pointcloud(os.path.join(directory, f"ex{i:02d}.csv"), pc)


# -- config files ---------------------------------------------------------------------

def test_read_config_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(SMALL + "[data]\nkind = points\n")
    cfg = read_config(p)
    assert cfg["model"]["channels"] == (2, 4) and cfg["training"]["batch_size"] == 2
    assert cfg["run"]["kind"] == "points"
    spec, tcfg = apply_overrides(*toy_defaults(), cfg)
    assert spec.hidden_dims == (8,) and tcfg.batch_size == 2


@pytest.mark.parametrize("text", ["[bogus]\na = 1\n", "[training]\nwhatever = 1\n",
                                  "[training]\nbatch_size = many\n", "[data]\nkind = video\n", "no header\n"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError):
        read_config(p)


# -- fit ------------------------------------------------------------------------------

def test_fit_constant_pgm(tmp_path, capsys):
    formats.write_pgm(tmp_path / "c.pgm", np.full((2, 2), 77, np.uint8))
    code = run(["fit", "--input", tmp_path / "c.pgm", "--steps", 500, "--m", 8, "--hidden", "32,32",
                "--out", tmp_path / "f.gasp"])
    assert code == 0
    out = capsys.readouterr().out
    assert float(out.split("final MSE:")[1]) < 1e-6


def test_fit_missing_input_and_zero_steps(tmp_path, capsys):
    missing = tmp_path / "nope.pgm"
    assert run(["fit", "--input", missing, "--out", tmp_path / "f"]) == 2
    assert str(missing) in capsys.readouterr().err
    formats.write_pgm(tmp_path / "c.pgm", np.full((2, 2), 10, np.uint8))
    assert run(["fit", "--input", tmp_path / "c.pgm", "--steps", 0, "--out", tmp_path / "f"]) == 0
    assert "final MSE" in capsys.readouterr().out


# -- train / sample -----------------------------------------------------------------------

def test_train_points_smoke_and_determinism(tmp_path):
    write_points(tmp_path / "data")
    (tmp_path / "c.cfg").write_text(SMALL)
    outs = []
    for name in ("a", "b"):
        code = run(["train", "--data", tmp_path / "data", "--kind", "points", "--epochs", 2,
                    "--config", tmp_path / "c.cfg", "--out", tmp_path / name])
        assert code == 0
        outs.append((tmp_path / name / "losses.csv").read_text())
    assert outs[0] == outs[1]
    assert len(outs[0].splitlines()) == 1 + 2 * 3


def test_train_resume_matches_uninterrupted(tmp_path):
    write_points(tmp_path / "data")
    (tmp_path / "c.cfg").write_text(SMALL)
    base = ["train", "--data", tmp_path / "data", "--kind", "points", "--config", tmp_path / "c.cfg"]
    assert run(base + ["--epochs", 2, "--out", tmp_path / "full"]) == 0
    assert run(base + ["--epochs", 2, "--max-steps", 2, "--out", tmp_path / "part"]) == 0
    resume = ["train", "--data", tmp_path / "data", "--kind", "points", "--resume", tmp_path / "part" / "checkpoint.gasp"]
    assert run(resume + ["--seed", 1, "--out", tmp_path / "rest"]) == 1
    assert run(resume + ["--max-steps", 6, "--out", tmp_path / "rest"]) == 0
    full = (tmp_path / "full" / "losses.csv").read_text().splitlines()
    rest = (tmp_path / "rest" / "losses.csv").read_text().splitlines()
    assert full[3:] == rest[1:]


def test_train_errors(tmp_path):
    write_points(tmp_path / "data")
    assert run(["train", "--data", tmp_path / "data", "--kind", "points", "--k-subsample", 100,
                "--out", tmp_path / "o"]) == 2
    assert run(["train", "--data", tmp_path / "missing", "--kind", "points", "--out", tmp_path / "o"]) == 2
    assert run(["train", "--data", tmp_path / "data", "--out", tmp_path / "o"]) == 1
    (tmp_path / "bad.cfg").write_text("[training]\nnope = 1\n")
    assert run(["train", "--data", tmp_path / "data", "--kind", "points", "--config", tmp_path / "bad.cfg",
                "--out", tmp_path / "o"]) == 1
    formats.write_csv_pointcloud(tmp_path / "data" / "odd.csv", PointCloud(np.zeros((3, 2)), np.zeros((3, 1))))
    assert run(["train", "--data", tmp_path / "data", "--kind", "points", "--out", tmp_path / "o"]) == 2


def test_image_train_and_sample(tmp_path):
    rng = np.random.default_rng(0)
    os.makedirs(tmp_path / "img")
    for i in range(4):
        formats.write_pgm(tmp_path / "img" / f"{i}.pgm", rng.integers(0, 256, (6, 6)).astype(np.uint8))
    (tmp_path / "c.cfg").write_text(SMALL)
    assert run(["train", "--data", tmp_path / "img", "--kind", "image", "--config", tmp_path / "c.cfg",
                "--k-subsample", 20, "--out", tmp_path / "run"]) == 0
    ck = tmp_path / "run" / "checkpoint.gasp"
    for name in ("s1", "s2"):
        assert run(["sample", "--ckpt", ck, "--resolution", "5,9", "--count", 2, "--seed", 3,
                    "--out", tmp_path / name]) == 0
    files = sorted(os.listdir(tmp_path / "s1"))
    assert files == ["sample000_r5.pgm", "sample000_r9.pgm", "sample001_r5.pgm", "sample001_r9.pgm"]
    for f in files:
        assert (tmp_path / "s1" / f).read_bytes() == (tmp_path / "s2" / f).read_bytes()
    # 5 x 5 coordinates are a subset of the 9 x 9 grid (every other node)
    a = formats.read_pgm(tmp_path / "s1" / "sample000_r5.pgm")
    b = formats.read_pgm(tmp_path / "s1" / "sample000_r9.pgm")
    np.testing.assert_array_equal(a, b[::2, ::2])


def test_sample_voxel_threshold_all_below(tmp_path):
    formats.write_voxel_text(tmp_path / "empty.vox", np.zeros((2, 2, 2), np.uint8))
    assert run(["fit", "--input", tmp_path / "empty.vox", "--steps", 200, "--m", 0, "--hidden", 16,
                "--out", tmp_path / "f.gasp"]) == 0
    assert run(["sample", "--ckpt", tmp_path / "f.gasp", "--resolution", 3, "--out", tmp_path / "s"]) == 0
    occ = formats.read_voxel_text(tmp_path / "s" / "sample000_r3.vox")
    assert occ.shape == (3, 3, 3) and not occ.any()


def test_sample_errors(tmp_path):
    (tmp_path / "junk").write_bytes(b"nope")
    assert run(["sample", "--ckpt", tmp_path / "junk", "--resolution", 4, "--out", tmp_path / "s"]) == 2
    assert run(["sample", "--ckpt", tmp_path / "junk", "--resolution", 0, "--out", tmp_path / "s"]) == 1


def test_sphere_metadata_sidecar(tmp_path):
    d = tmp_path / "sphere"
    os.makedirs(d)
    rng = np.random.default_rng(1)
    for i in range(2):
        formats.write_latlon_csv(d / f"{i}.csv", rng.uniform(0, 10, (3, 4)))
    formats.write_metadata(d / "metadata.txt", {"feature_min": -10, "feature_max": 30, "kind": "sphere"})
    clouds, info = load_dataset(str(d), "sphere")
    assert len(clouds) == 2 and info["feature_min"] == -10.0 and info["feature_max"] == 30.0
    assert clouds[0].d == 3 and np.max(clouds[0].features) <= 0.0


# -- verify -----------------------------------------------------------------------------

def test_verify(tmp_path, capsys):
    assert run(["verify", "--trials", 0]) == 1
    capsys.readouterr()
    assert run(["verify", "--trials", 30, "--pairs", 2000, "--seed", 4, "--out", tmp_path]) == 0
    first = capsys.readouterr().out
    assert first.strip().endswith("ALL PASS")
    for name in ("lemma1", "lemma2", "lemma3", "lemma4", "prop1", "prop2"):
        assert name in first
    assert (tmp_path / "verify.csv").exists()
    run(["verify", "--trials", 30, "--pairs", 2000, "--seed", 4])
    assert capsys.readouterr().out == first


def test_usage_errors():
    assert run([]) == 1
    assert run(["fit"]) == 1
    assert run(["sample", "--ckpt", "x", "--resolution", 4, "--count", 0, "--out", "o"]) == 1
