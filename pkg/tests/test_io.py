import struct

import numpy as np
import pytest
from PIL import Image

from dmnet.checkpoint import Checkpoint, load_into
from dmnet.config import ConfigError, RunConfig
from dmnet.data import load_pairs, mod_crop, quantize, read_png, synthetic_dataset, write_png
from dmnet.metrics import bicubic_resize
from dmnet.model import DMNetWeights
from dmnet.training import AdamState

TINY_TEXT = "scale=2\nchannels=8\nn_groups=1\nn_blocks=1\n"


# ----------------------------------------------------------------------------
# config


def test_parse_all_keys_and_comments():
    text = """
    # tiny run
    scale = 3
    channels=16   # trailing comment
    n_groups=2
    n_blocks=1
    ffn_ratio=1.5
    lambda=0.2
    lr0=1e-3
    iters=10
    batch=4
    patch=16
    seed=42
    data_dir=/tmp/data
    out_dir=/tmp/out
    ablation.dynamic=false
    ablation.freq_domain=fourier
    ablation.freq_loss=wavelet
    augment=no
    """
    cfg = RunConfig.parse(text)
    assert (cfg.scale, cfg.channels, cfg.lam, cfg.iters, cfg.seed) == (3, 16, 0.2, 10, 42)
    m = cfg.model_config()
    assert m.ablation.dynamic is False and m.ablation.freq_domain == "fourier"
    t = cfg.train_config()
    assert t.lam == 0.2 and t.augment is False and t.total_iters == 10


def test_text_round_trip():
    cfg = RunConfig.parse(TINY_TEXT + "lr0=0.0003\nablation.dynamic=false\n")
    assert RunConfig.parse(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,match", [
    ("scale=2\nwidth=3\n", r"cfg:2: unknown key 'width'"),
    ("scale=two\n", r"cfg:1: bad value for scale"),
    ("channels 8\n", r"cfg:1: expected key=value"),
    ("ablation.dynamic=maybe\n", "bad value"),
    ("channels=6\n", "multiple of 4"),
    ("ablation.freq_domain=pixel\n", "freq_domain"),
    ("patch=7\n", "patch"),
])
def test_invalid_configs_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.parse(text, "cfg")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "nope.cfg")


# ----------------------------------------------------------------------------
# checkpoint


def tiny_checkpoint(with_opt=True):
    cfg = RunConfig.parse(TINY_TEXT)
    w = DMNetWeights.init(cfg.model_config(), 3)
    state = None
    if with_opt:
        rng = np.random.default_rng(0)
        state = AdamState({n: rng.standard_normal(t.shape).astype(np.float32) for n, t in w.named_parameters()},
                          {n: rng.uniform(size=t.shape).astype(np.float32) for n, t in w.named_parameters()}, 17)
    return Checkpoint.capture(cfg, w, state)


@pytest.mark.parametrize("with_opt", [False, True])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, with_opt):
    ck = tiny_checkpoint(with_opt)
    ck.save(tmp_path / "a.dmn")
    back = Checkpoint.load(tmp_path / "a.dmn")
    assert back.to_bytes() == ck.to_bytes()
    assert back.config == ck.config
    for name, arr in ck.tensors.items():
        assert back.tensors[name].tobytes() == arr.tobytes()
    if with_opt:
        assert back.optimizer.step == 17
        assert back.optimizer.m.keys() == ck.optimizer.m.keys()


def test_handmade_checkpoint_parses():
    cfg_txt = RunConfig.parse(TINY_TEXT).to_text().encode()
    data = np.arange(6, dtype="<f4").reshape(2, 3)
    buf = (b"DMN1" + struct.pack("<I", 1) + struct.pack("<I", len(cfg_txt)) + cfg_txt
           + struct.pack("<I", 1) + struct.pack("<I", 3) + b"abc" + struct.pack("<BI", 1, 2)
           + struct.pack("<2I", 2, 3) + data.tobytes() + b"\x00")
    ck = Checkpoint.from_bytes(buf)
    np.testing.assert_array_equal(ck.tensors["abc"], data)
    assert ck.optimizer is None
    assert ck.to_bytes() == buf


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"XXXX" + b[4:], "bad magic"),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], "version 2"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
])
def test_corrupt_checkpoints_rejected(mutate, match):
    buf = tiny_checkpoint(False).to_bytes()
    with pytest.raises(ValueError, match=match):
        Checkpoint.from_bytes(mutate(buf))


def test_mismatched_model_names_first_bad_tensor():
    ck = tiny_checkpoint(False)
    bigger = DMNetWeights.init(RunConfig.parse(TINY_TEXT.replace("n_blocks=1", "n_blocks=2")).model_config())
    with pytest.raises(ValueError, match="groups.0.blocks.1"):
        load_into(bigger, ck.tensors)
    wider = DMNetWeights.init(RunConfig.parse(TINY_TEXT.replace("channels=8", "channels=12")).model_config())
    with pytest.raises(ValueError, match="'head.weight' has shape"):
        load_into(wider, ck.tensors)


def test_build_weights_restores_values():
    ck = tiny_checkpoint(False)
    w = ck.build_weights()
    for name, t in w.named_parameters():
        np.testing.assert_array_equal(t.data, ck.tensors[name])


# ----------------------------------------------------------------------------
# images and datasets


def test_quantize_rounds_half_away_and_clamps():
    img = np.array([0.5, 2.5, 254.49, 300.0, -3.0]).reshape(1, 1, 5) / 255
    q = quantize(np.repeat(img, 3, axis=0))
    assert q.shape == (1, 5, 3)
    assert q[0, :, 0].tolist() == [1, 3, 254, 255, 0]


def test_png_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (3, 5, 7)) / 255.0
    write_png(tmp_path / "x.png", img)
    np.testing.assert_array_equal(read_png(tmp_path / "x.png"), img.astype(np.float32))
    with Image.open(tmp_path / "x.png") as im:
        assert im.size == (7, 5) and im.mode == "RGB"


def test_read_rejects_non_png(tmp_path):
    with pytest.raises(ValueError, match="PNG"):
        read_png(tmp_path / "x.jpg")


def test_hr_only_layout_synthesizes_lr(tmp_path, rng):
    write_png(tmp_path / "b.png", rng.uniform(0, 1, (3, 13, 14)))
    write_png(tmp_path / "a.png", rng.uniform(0, 1, (3, 12, 12)))
    pairs = load_pairs(tmp_path, 3)
    assert [p.name for p in pairs] == ["a", "b"]
    b = pairs[1]
    assert b.hr.shape == (3, 12, 12) and b.lr.shape == (3, 4, 4)
    expect = np.clip(bicubic_resize(mod_crop(read_png(tmp_path / "b.png"), 3), "1/3"), 0, 1)
    np.testing.assert_allclose(b.lr, expect, atol=1e-6)


def test_paired_layout(tmp_path, rng):
    (tmp_path / "HR").mkdir()
    (tmp_path / "LR").mkdir()
    write_png(tmp_path / "HR" / "p.png", rng.uniform(0, 1, (3, 9, 8)))
    write_png(tmp_path / "LR" / "p.png", rng.uniform(0, 1, (3, 4, 4)))
    (pair,) = load_pairs(tmp_path, 2)
    assert pair.hr.shape == (3, 8, 8) and pair.lr.shape == (3, 4, 4)
    write_png(tmp_path / "HR" / "q.png", rng.uniform(0, 1, (3, 8, 8)))
    with pytest.raises(FileNotFoundError, match="no LR image for q.png"):
        load_pairs(tmp_path, 2)


def test_paired_layout_scale_mismatch(tmp_path, rng):
    (tmp_path / "HR").mkdir()
    (tmp_path / "LR").mkdir()
    write_png(tmp_path / "HR" / "p.png", rng.uniform(0, 1, (3, 8, 8)))
    write_png(tmp_path / "LR" / "p.png", rng.uniform(0, 1, (3, 4, 4)))
    with pytest.raises(ValueError, match="not x3"):
        load_pairs(tmp_path, 3)


def test_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match=str(tmp_path / "missing")):
        load_pairs(tmp_path / "missing", 2)
    with pytest.raises(ValueError, match="no PNG"):
        load_pairs(tmp_path, 2)


def test_synthetic_dataset_is_seeded():
    a, b = synthetic_dataset(3, 16, 2, seed=4), synthetic_dataset(3, 16, 2, seed=4)
    assert [p.name for p in a] == ["img000", "img001", "img002"]
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.hr, q.hr)
    assert a[0].lr.shape == (3, 8, 8)
    assert 0 <= a[0].hr.min() and a[0].hr.max() <= 1
