import numpy as np
import pytest

from tangentdepth import autograd as ag
from tangentdepth import io
from tangentdepth.geometry import build_patch_layout
from tangentdepth.model import init_params
from tangentdepth.patches import ErpImage


def test_depth_roundtrip_bitwise(tmp_path, rng):
    d = rng.uniform(0.5, 9, (6, 12)).astype(np.float32)
    d[2, 3] = np.nan
    path = tmp_path / "a.depth"
    io.write_depth(path, d)
    raw = path.read_bytes()
    assert raw.startswith(b"OMNIDEPTH v1 12 6\n")
    assert len(raw) == len(b"OMNIDEPTH v1 12 6\n") + 4 * 72
    back = io.read_depth_array(path)
    assert back.tobytes() == d.tobytes()
    io.write_depth(tmp_path / "b.depth", back)
    assert (tmp_path / "b.depth").read_bytes() == raw


def test_depth_layout_is_little_endian_row_major(tmp_path):
    d = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
    io.write_depth(tmp_path / "x", d)
    body = (tmp_path / "x").read_bytes().split(b"\n", 1)[1]
    assert body == np.array([1, 2, 3, 4], "<f4").tobytes()


def test_depth_mask_becomes_nan(tmp_path):
    img = ErpImage(np.ones((1, 2, 4)), np.array([[True] * 4, [False, True, True, True]]))
    io.write_depth(tmp_path / "m", img)
    back = io.read_depth(tmp_path / "m")
    assert back.valid.tolist() == img.mask.tolist()


@pytest.mark.parametrize(
    "payload",
    [b"", b"OMNIDEPTH v1 2 2", b"OMNIDEPTH v2 2 2\n" + bytes(16), b"OMNIDEPTH v1 2 x\n",
     b"OMNIDEPTH v1 2 2\n" + bytes(15), b"OMNIDEPTH v1 2 2\n" + bytes(17), b"OMNIDEPTH v1 0 2\n"],
)
def test_depth_rejects_malformed(tmp_path, payload):
    p = tmp_path / "bad"
    p.write_bytes(payload)
    with pytest.raises(io.FormatError):
        io.read_depth_array(p)


def test_params_roundtrip_bitwise(tmp_path, tiny_cfg):
    params = init_params(tiny_cfg.replace(dtype="float32"), 3)
    path = tmp_path / "p.bin"
    io.write_params(path, params)
    back = io.read_params(path)
    assert list(back) == list(params)
    for k in params:
        assert back[k].data.tobytes() == params[k].data.tobytes()
    io.write_params(tmp_path / "q.bin", back)
    assert (tmp_path / "q.bin").read_bytes() == path.read_bytes()


def test_params_manifest_text(tmp_path):
    io.write_params(tmp_path / "p", {"a.w": np.zeros((2, 3)), "b": np.ones(4), "s": np.array(2.0)})
    raw = (tmp_path / "p").read_bytes()
    header, body = raw.split(b"\n\n", 1)
    assert header.decode().splitlines() == ["OMNIPARAM v1", "a.w 2 2 3", "b 1 4", "s 0"]
    assert len(body) == 4 * 11


@pytest.mark.parametrize(
    "payload",
    [b"OMNIPARAM v1\nw 1 2\n", b"NOPE\nw 1 2\n\n" + bytes(8), b"OMNIPARAM v1\nw 2 2\n\n" + bytes(8),
     b"OMNIPARAM v1\nw 1 2\n\n" + bytes(7), b"OMNIPARAM v1\nw x\n\n"],
)
def test_params_reject_malformed(tmp_path, payload):
    p = tmp_path / "bad"
    p.write_bytes(payload)
    with pytest.raises(io.FormatError):
        io.read_params(p)


def test_params_reject_bad_names(tmp_path):
    with pytest.raises(io.FormatError):
        io.write_params(tmp_path / "p", {"has space": np.zeros(1)})


def test_config_parse_and_defaults():
    cfg = io.parse_config(
        "# comment\nfov = 90\nrings = -30:4, 30:4\nenc_channels = 4, 8, 16\nuse_geometry = no\nlr = 1e-3 # tail\n"
    )
    assert cfg.fov == 90.0 and cfg.rings == ((-30.0, 4), (30.0, 4))
    assert cfg.enc_channels == (4, 8, 16) and cfg.use_geometry is False and cfg.lr == 1e-3
    assert len(cfg.layout()) == 8 and cfg.model_config().n_patches == 8
    default = io.RunConfig()
    assert default.model_config().n_patches == 18 and default.fov == 80
    assert default.depth == 6 and default.heads == 4 and default.train_iters == 2


@pytest.mark.parametrize("text", ["nope = 1", "fov 80", "depth = x", "use_geometry = maybe", "rings = 10"])
def test_config_errors(text):
    with pytest.raises(io.FormatError):
        io.parse_config(text)


def test_config_text_roundtrip():
    cfg = io.parse_config("rings = -45:4, 45:4\nsteps = 9\n")
    again = io.parse_config(cfg.to_text())
    assert again == cfg
    assert set(io.RunConfig.HELP) == set(io.RunConfig().__dataclass_fields__)


def test_layout_manifest_roundtrip(tmp_path):
    layout = build_patch_layout(patch_res=32)
    io.write_layout_manifest(tmp_path / "l.txt", layout, 128, 64)
    back, w, h = io.read_layout_manifest(tmp_path / "l.txt")
    assert (w, h) == (128, 64) and back == layout


def test_image_roundtrip(tmp_path, rng):
    data = rng.integers(0, 256, (3, 8, 16)) / 255.0
    io.write_image(tmp_path / "i.png", data)
    back = io.read_image(tmp_path / "i.png")
    np.testing.assert_allclose(back.data, data, atol=1e-7)
    io.write_image(tmp_path / "g.png", data[:1])
    assert io.image_array(tmp_path / "g.png").shape == (1, 8, 16)
