from importlib import resources

import numpy as np
import pytest

from tangentdepth import io
from tangentdepth.cli import main
from tangentdepth.patches import psnr
from tangentdepth.scenes import SceneSpec, render_scene

SMALL = """\
patch_res = 16
erp_height = 32
enc_channels = 4, 8, 8
dec_channels = 8, 4, 4
embed_hidden = 8
reduce_channels = 2
depth = 2
heads = 2
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return str(path)


def smooth_png():
    return resources.files("tangentdepth") / "data" / "smooth_erp.png"


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["bogus"]) == 2
    assert main(["infer", "--input", "x"]) == 2
    assert main(["infer", "--input", "x", "--params", "p", "--out", "o", "--iters", "5"]) == 2
    assert "usage" in capsys.readouterr().err


def test_help_lists_config_keys(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "patch_res = 64" in out and "heads = 4" in out


def test_runtime_error_exit_1(tmp_path, capsys):
    assert main(["eval", "--pred", str(tmp_path / "none"), "--gt", str(tmp_path / "none")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("tangentdepth eval:")
    (tmp_path / "bad.cfg").write_text("fvo = 80\n")
    assert main(["project", "--input", str(smooth_png()), "--config", str(tmp_path / "bad.cfg"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "unknown config key 'fvo'" in capsys.readouterr().err


def test_project_merge_roundtrip(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("patch_res = 256\n")
    with resources.as_file(smooth_png()) as src:
        assert main(["project", "--input", str(src), "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
        assert len(list((tmp_path / "p").glob("patch_*.png"))) == 18
        assert main(["merge", "--patches", str(tmp_path / "p"), "--confidence", "uniform",
                     "--out", str(tmp_path / "m.png")]) == 0
        assert psnr(io.read_image(tmp_path / "m.png").data, io.read_image(src).data) > 30


def test_project_merge_depth(tmp_path, small_config):
    _, depth = render_scene(SceneSpec((2.0, 3.0, 1.5)), 64, 32)
    io.write_depth(tmp_path / "gt.depth", depth)
    assert main(["project", "--input", str(tmp_path / "gt.depth"), "--config", small_config,
                 "--out", str(tmp_path / "p")]) == 0
    conf = tmp_path / "conf"
    conf.mkdir()
    for i in range(18):
        io.write_depth(conf / f"patch_{i:02d}.depth", np.full((16, 16), 0.5, np.float32))
    assert main(["merge", "--patches", str(tmp_path / "p"), "--confidence", str(conf),
                 "--out", str(tmp_path / "m.depth")]) == 0
    back = io.read_depth_array(tmp_path / "m.depth")
    assert np.abs(back - depth.data[0]).mean() < 0.05


def test_merge_without_manifest_uses_config(tmp_path, small_config):
    folder = tmp_path / "p"
    folder.mkdir()
    for i in range(18):
        io.write_depth(folder / f"patch_{i:02d}.depth", np.full((16, 16), 2.0, np.float32))
    assert main(["merge", "--patches", str(folder), "--config", small_config, "--out", str(tmp_path / "m")]) == 0
    back = io.read_depth_array(tmp_path / "m")
    assert back.shape == (32, 64) and np.allclose(back, 2.0)


def test_merge_count_mismatch(tmp_path, small_config):
    folder = tmp_path / "p"
    folder.mkdir()
    io.write_depth(folder / "patch_00.depth", np.ones((16, 16), np.float32))
    assert main(["merge", "--patches", str(folder), "--config", small_config, "--out", str(tmp_path / "m")]) == 1


def test_eval_identity(tmp_path, capsys):
    _, depth = render_scene(SceneSpec((2.0, 3.0, 1.5)), 32, 16)
    io.write_depth(tmp_path / "d", depth)
    assert main(["eval", "--pred", str(tmp_path / "d"), "--gt", str(tmp_path / "d")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "abs_rel=0" in lines and "delta1=1" in lines and len(lines) == 7


def test_eval_mask(tmp_path, capsys):
    gt = np.full((4, 8), 2.0, np.float32)
    pred = gt.copy()
    pred[:, :4] = 4.0
    mask = np.zeros((4, 8), np.float32)
    mask[:, 4:] = 1
    for name, arr in (("p", pred), ("g", gt), ("m", mask)):
        io.write_depth(tmp_path / name, arr)
    assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"), "--mask", str(tmp_path / "m")]) == 0
    assert "abs_rel=0" in capsys.readouterr().out.splitlines()


def test_train_infer_deterministic(tmp_path, small_config, capsys):
    traces = []
    for run in ("a", "b"):
        assert main(["train", "--scenes", "2", "--steps", "6", "--seed", "7", "--config", small_config,
                     "--out", str(tmp_path / f"{run}.params")]) == 0
        traces.append(capsys.readouterr().out.splitlines())
    assert traces[0] == traces[1] and len(traces[0]) == 6
    assert traces[0][0].startswith("step=0 lr=0.002 loss=")
    assert (tmp_path / "a.params").read_bytes() == (tmp_path / "b.params").read_bytes()

    rgb, _ = render_scene(SceneSpec((2.0, 2.5, 1.2), "stripes", 2), 64, 32)
    io.write_image(tmp_path / "in.png", rgb.data)
    outs = []
    for run in ("x", "y"):
        assert main(["infer", "--input", str(tmp_path / "in.png"), "--params", str(tmp_path / "a.params"),
                     "--iters", "2", "--config", small_config, "--out", str(tmp_path / run)]) == 0
        outs.append((tmp_path / run).read_bytes())
    assert outs[0] == outs[1]
    assert io.read_depth_array(tmp_path / "x").shape == (32, 64)


def test_train_scene_manifest(tmp_path, small_config, capsys):
    manifest = tmp_path / "rooms.txt"
    manifest.write_text("# hx hy hz texture seed\n2 3 1.5 plain 4\n2.5 2.5 1\n")
    trace = tmp_path / "trace.txt"
    assert main(["train", "--scenes", str(manifest), "--steps", "2", "--config", small_config,
                 "--trace", str(trace), "--out", str(tmp_path / "p")]) == 0
    assert len(trace.read_text().splitlines()) == 2
    manifest.write_text("2 x 1\n")
    assert main(["train", "--scenes", str(manifest), "--steps", "1", "--config", small_config,
                 "--out", str(tmp_path / "p")]) == 1
