import json
import struct

import numpy as np
import pytest

from sliceinterp import autodiff as ad
from sliceinterp.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from sliceinterp.models import build_model, desk_config


@pytest.mark.parametrize("arch", ["edsr", "unet", "gan_improved", "ddpm_unet"])
def test_roundtrip_reproduces_outputs(arch, tmp_path):
    cfg = desk_config(arch)
    m = build_model(cfg, seed=4)
    save_checkpoint(m, cfg, tmp_path / "m.smdl", {"note": 1})
    m2, cfg2, extra = load_checkpoint(tmp_path / "m.smdl", arch)
    assert cfg2 == cfg and extra == {"note": 1}
    for (n1, a), (n2, b) in zip(m.state_dict().items(), m2.state_dict().items()):
        assert n1 == n2 and a.tobytes() == b.tobytes()
    x = ad.Tensor(np.random.default_rng(0).random((1, 3 if arch == "ddpm_unet" else 2, 16, 16)))
    with ad.no_grad():
        args = (x, 3) if arch == "ddpm_unet" else (x,)
        assert m.eval()(*args).data.tobytes() == m2.eval()(*args).data.tobytes()


def test_layout(tmp_path):
    cfg = desk_config("edsr")
    save_checkpoint(build_model(cfg), cfg, tmp_path / "m.smdl")
    raw = (tmp_path / "m.smdl").read_bytes()
    assert raw.startswith(b"SMDL1 {")
    nl = raw.index(b"\n")
    header = json.loads(raw[6:nl])
    assert header["arch"] == "edsr" and header["n_blobs"] == len(build_model(cfg).state_dict())
    (name_len,) = struct.unpack_from("<I", raw, nl + 1)
    assert raw[nl + 5 : nl + 5 + name_len] == b"entry.weight"


def test_save_is_deterministic(tmp_path):
    cfg = desk_config("unet")
    save_checkpoint(build_model(cfg, 1), cfg, tmp_path / "a.smdl")
    save_checkpoint(build_model(cfg, 1), cfg, tmp_path / "b.smdl")
    assert (tmp_path / "a.smdl").read_bytes() == (tmp_path / "b.smdl").read_bytes()


def test_errors(tmp_path):
    cfg = desk_config("edsr")
    save_checkpoint(build_model(cfg), cfg, tmp_path / "m.smdl")
    with pytest.raises(CheckpointError, match="expected 'unet'"):
        load_checkpoint(tmp_path / "m.smdl", "unet")
    raw = (tmp_path / "m.smdl").read_bytes()
    (tmp_path / "t.smdl").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "t.smdl")
    (tmp_path / "x.smdl").write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "x.smdl")
    (tmp_path / "e.smdl").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(tmp_path / "e.smdl")
