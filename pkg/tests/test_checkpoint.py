import os

import numpy as np
import pytest

from gentron.checkpoint import (
    MAGIC, build_checkpoint, load_checkpoint, model_from_checkpoint, optimizer_from_checkpoint,
    save_checkpoint,
)
from gentron.checks import desk_config, perturb
from gentron.errors import (
    CheckpointHeaderError, CheckpointShapeError, CheckpointTruncatedError,
)
from gentron.model import GenTron
from gentron.numerics.rng import Rng
from gentron.trainer import AdamW, TrainConfig
from gentron.video import inflate_t2i


@pytest.fixture
def model():
    return perturb(GenTron(desk_config(), seed=0), Rng(1))


def test_roundtrip_bitwise(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    ckpt = load_checkpoint(path)
    params = dict(model.named_parameters())
    assert list(ckpt.tensors) == list(params)
    for name, arr in ckpt.tensors.items():
        assert arr.tobytes() == params[name].data.tobytes()
    back = model_from_checkpoint(ckpt)
    for name, p in back.named_parameters():
        assert p.data.tobytes() == params[name].data.tobytes()
    save_checkpoint(ckpt, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_header_layout(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC == b"GTRNCKPT"
    assert int.from_bytes(raw[8:12], "little") == 1
    assert int.from_bytes(raw[12:16], "little") == len(list(model.named_parameters()))


def test_optimizer_state_roundtrip(tmp_path, model):
    opt = AdamW(model, TrainConfig(lr=3e-4))
    opt.step_count = 5
    for m, v in opt.moments.values():
        m += 0.25
        v += 0.5
    save_checkpoint(model, tmp_path / "m.ckpt", opt)
    ckpt = load_checkpoint(tmp_path / "m.ckpt")
    back = optimizer_from_checkpoint(ckpt, model_from_checkpoint(ckpt))
    assert back.step_count == 5 and back.cfg.lr == 3e-4
    for name, (m, v) in opt.moments.items():
        assert back.moments[name][0].tobytes() == m.tobytes()
        assert back.moments[name][1].tobytes() == v.tobytes()


def test_truncated_file(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    for cut in (4, 20, len(raw) // 2, len(raw) - 3):
        (tmp_path / "t.ckpt").write_bytes(raw[:cut])
        with pytest.raises(CheckpointTruncatedError) as info:
            load_checkpoint(tmp_path / "t.ckpt")
        assert info.value.code == "truncated"


def test_corrupt_header(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    bad = bytearray(raw)
    bad[0:8] = b"NOTACKPT"
    (tmp_path / "b.ckpt").write_bytes(bad)
    with pytest.raises(CheckpointHeaderError) as info:
        load_checkpoint(tmp_path / "b.ckpt")
    assert info.value.code == "corrupt_header"
    bad = bytearray(raw)
    bad[8] = 9
    (tmp_path / "v.ckpt").write_bytes(bad)
    with pytest.raises(CheckpointHeaderError):
        load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "x.ckpt").write_bytes(bytes(raw) + b"junk")
    with pytest.raises(CheckpointHeaderError):
        load_checkpoint(tmp_path / "x.ckpt")


def test_t2v_into_t2i_is_shape_error(tmp_path, model):
    t2v = inflate_t2i(model)
    save_checkpoint(t2v, tmp_path / "v.ckpt")
    ckpt = load_checkpoint(tmp_path / "v.ckpt")
    assert ckpt.inflated
    with pytest.raises(CheckpointShapeError) as info:
        model_from_checkpoint(ckpt, expect_inflated=False)
    assert info.value.code == "shape_mismatch"
    assert model_from_checkpoint(ckpt).inflated


def test_t2i_checkpoint_inflates(tmp_path, model):
    save_checkpoint(model, tmp_path / "i.ckpt")
    t2v = inflate_t2i(load_checkpoint(tmp_path / "i.ckpt"))
    assert t2v.inflated


def test_wrong_shape_rejected(tmp_path, model):
    ckpt = build_checkpoint(model)
    name = next(iter(ckpt.tensors))
    ckpt.tensors[name] = np.zeros((3, 3), np.float32)
    with pytest.raises(CheckpointShapeError):
        model_from_checkpoint(ckpt)


def test_atomic_write_leaves_no_temp(tmp_path, model):
    save_checkpoint(model, tmp_path / "m.ckpt")
    assert os.listdir(tmp_path) == ["m.ckpt"]
