import numpy as np
import pytest

from segan import config as config_mod
from segan.config import ConfigError, TrainConfig
from segan.imageio import (ImageFormatError, read_dataset, read_image, read_pgm, read_raw,
                           write_image, write_pgm, write_raw)
from segan.phantoms import generate_phantoms


# -- phantoms -------------------------------------------------------------------

def test_phantoms_deterministic():
    a = generate_phantoms(16, 32, 7)
    b = generate_phantoms(16, 32, 7)
    assert len(a) == 16
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_phantom_properties():
    imgs = generate_phantoms(16, 32, 7)
    for x in imgs:
        assert x.min() >= 0 and x.max() <= 1
        assert x.var() > 1e-3
        assert len(np.unique(x)) >= 3
    for i in range(len(imgs)):
        for j in range(i + 1, len(imgs)):
            assert np.abs(imgs[i] - imgs[j]).max() > 0.05


def test_phantom_edge_cases():
    assert generate_phantoms(0, 32, 1) == []
    with pytest.raises(ValueError):
        generate_phantoms(1, 24, 1)
    with pytest.raises(ValueError):
        generate_phantoms(1, 8, 1)


# -- image files ----------------------------------------------------------------

def test_raw_round_trip(tmp_path, rng):
    x = rng.random((16, 16))
    p = tmp_path / "a.raw"
    write_raw(p, x)
    assert np.array_equal(read_raw(p), x)
    assert p.read_bytes().startswith(b"16\n")
    assert p.stat().st_size == 3 + 16 * 16 * 8


def test_pgm_round_trip(tmp_path, rng):
    x = rng.random((8, 12))
    p = tmp_path / "a.pgm"
    write_pgm(p, x)
    assert np.max(np.abs(read_pgm(p) - x)) <= 1 / 65535
    assert p.read_bytes().startswith(b"P5\n12 8\n65535\n")


def test_pgm_with_comment_and_8bit(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# comment\n2 2\n255\n" + bytes([0, 255, 51, 102]))
    assert read_pgm(p).tolist() == [[0.0, 1.0], [0.2, 0.4]]


def test_raw_truncated(tmp_path, rng):
    p = tmp_path / "t.raw"
    write_raw(p, rng.random((4, 4)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ImageFormatError, match="120 bytes, expected 128"):
        read_raw(p)


def test_pgm_truncated(tmp_path, rng):
    p = tmp_path / "t.pgm"
    write_pgm(p, rng.random((4, 4)))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ImageFormatError, match="expected 32 bytes, got 29"):
        read_pgm(p)


@pytest.mark.parametrize("payload", [b"P2\n2 2\n255\n0000", b"P5\n2 x\n255\n0000", b"P5\n2 2\n0\n",
                                     b"P5\n2"])
def test_pgm_malformed(tmp_path, payload):
    p = tmp_path / "m.pgm"
    p.write_bytes(payload)
    with pytest.raises(ImageFormatError, match="byte"):
        read_pgm(p)


def test_raw_malformed(tmp_path):
    p = tmp_path / "m.raw"
    p.write_bytes(b"abc\n" + b"\0" * 8)
    with pytest.raises(ImageFormatError, match="byte 0"):
        read_raw(p)
    p.write_bytes(b"no newline")
    with pytest.raises(ImageFormatError):
        read_raw(p)


def test_dataset_directory(tmp_path, rng):
    imgs = [rng.random((8, 8)) for _ in range(3)]
    for i, x in enumerate(imgs):
        write_image(tmp_path / f"img{i}.raw", x)
    (tmp_path / "notes.txt").write_text("ignored")
    back = read_dataset(tmp_path)
    assert all(np.array_equal(a, b) for a, b in zip(back, imgs))
    assert np.array_equal(read_image(tmp_path / "img1.raw"), imgs[1])
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError):
        read_dataset(empty)


# -- config -----------------------------------------------------------------------

def test_config_parse_and_comments():
    cfg = config_mod.parse_text("# run\nlearning_rate = 0.001  # faster\nbatch_size=8\n"
                                "zero_init_output = yes\ncorr = combo(0.5*pearson, 0.5*gaussian(0.5))\n")
    assert cfg.learning_rate == 0.001 and cfg.batch_size == 8 and cfg.zero_init_output
    assert cfg.disc_config().norm == "batch"
    assert TrainConfig().disc_config().norm == "none"


def test_config_round_trip():
    cfg = TrainConfig(learning_rate=3e-4, corr="gaussian(0.5)", seed=12)
    assert config_mod.parse_text(config_mod.to_text(cfg)) == cfg
    assert config_mod.to_text(TrainConfig()).count("\n") == len(TrainConfig.__dataclass_fields__)


@pytest.mark.parametrize("text", ["unknown_key = 1", "batch_size = two", "learning_rate = -1",
                                  "corr = nope", "disc_norm = layer", "no equals sign",
                                  "zero_init_output = maybe", "image_side = 20",
                                  "n_units = 5"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        config_mod.parse_text(text)


def test_config_load(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("total_iterations = 7\n")
    assert config_mod.load(p).total_iterations == 7
