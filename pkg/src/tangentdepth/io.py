"""File formats and run configuration.

``OMNIDEPTH v1``: one ASCII header line ``OMNIDEPTH v1 <W> <H>``, then
H*W little-endian float32 values, row-major, top row first. NaN marks
invalid pixels.

``OMNIPARAM v1``: the magic line, then one manifest line per tensor
(``name rank dim...``), a blank line, then every tensor as little-endian
float32 in manifest order.

Configuration files are ``key = value`` lines; ``#`` starts a comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .geometry import DEFAULT_RINGS, PatchLayout, TangentPose, build_patch_layout
from .model import ModelConfig
from .patches import ErpImage
from .pipeline import TrainConfig

DEPTH_MAGIC = b"OMNIDEPTH v1"
PARAM_MAGIC = b"OMNIPARAM v1"


class FormatError(ValueError):
    pass


# -- depth ---------------------------------------------------------------------


def write_depth(path, depth) -> None:
    arr = depth.data[0] if isinstance(depth, ErpImage) else np.asarray(depth)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise FormatError(f"depth must be 2-D, got shape {arr.shape}")
    arr = arr.astype("<f4")
    if isinstance(depth, ErpImage) and depth.mask is not None:
        arr = np.where(depth.mask, arr, np.float32(np.nan)).astype("<f4")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + f" {w} {h}\n".encode("ascii"))
        fh.write(arr.tobytes(order="C"))


def read_depth_array(path) -> np.ndarray:
    """(H, W) float32 array; NaN where invalid."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    parts = raw[:nl].split()
    if len(parts) != 4 or b" ".join(parts[:2]) != DEPTH_MAGIC:
        raise FormatError(f"{path}: not an OMNIDEPTH v1 file")
    try:
        w, h = int(parts[2]), int(parts[3])
    except ValueError:
        raise FormatError(f"{path}: bad dimensions in header") from None
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad dimensions {w}x{h}")
    body = raw[nl + 1 :]
    if len(body) != 4 * w * h:
        raise FormatError(f"{path}: expected {4 * w * h} data bytes for {w}x{h}, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)


def read_depth(path) -> ErpImage:
    arr = read_depth_array(path)
    return ErpImage(arr[None], np.isfinite(arr))


def is_depth_file(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(len(DEPTH_MAGIC)) == DEPTH_MAGIC


# -- params --------------------------------------------------------------------


def write_params(path, params: dict) -> None:
    lines = [PARAM_MAGIC.decode()]
    for name, t in params.items():
        arr = t.data if isinstance(t, ag.Tensor) else np.asarray(t)
        if any(c.isspace() for c in name) or not name:
            raise FormatError(f"parameter name {name!r} must be non-empty without whitespace")
        lines.append(" ".join([name, str(arr.ndim)] + [str(d) for d in arr.shape]))
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        for t in params.values():
            arr = t.data if isinstance(t, ag.Tensor) else np.asarray(t)
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_params(path, dtype=np.float32, requires_grad: bool = True) -> dict[str, ag.Tensor]:
    raw = Path(path).read_bytes()
    end = raw.find(b"\n\n")
    if end < 0:
        raise FormatError(f"{path}: manifest is not terminated by a blank line")
    lines = raw[:end].decode("ascii").split("\n")
    if lines[0] != PARAM_MAGIC.decode():
        raise FormatError(f"{path}: not an OMNIPARAM v1 file")
    manifest = []
    for ln in lines[1:]:
        parts = ln.split()
        try:
            name, rank = parts[0], int(parts[1])
            shape = tuple(int(d) for d in parts[2:])
        except (IndexError, ValueError):
            raise FormatError(f"{path}: bad manifest line {ln!r}") from None
        if len(shape) != rank:
            raise FormatError(f"{path}: {name} declares rank {rank} but lists {len(shape)} dims")
        manifest.append((name, shape))
    body = raw[end + 2 :]
    need = 4 * sum(math.prod(s) for _, s in manifest)
    if len(body) != need:
        raise FormatError(f"{path}: expected {need} data bytes, found {len(body)}")
    out, offset = {}, 0
    for name, shape in manifest:
        n = math.prod(shape)
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=offset).reshape(shape)
        out[name] = ag.Tensor(arr.astype(dtype), requires_grad=requires_grad, name=name)
        offset += 4 * n
    return out


# -- images --------------------------------------------------------------------


def read_image(path) -> ErpImage:
    """8-bit PNG (or any Pillow-readable image) -> channels-first floats in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return ErpImage(np.ascontiguousarray(arr))


def image_array(path) -> np.ndarray:
    """Like :func:`read_image` without the 2:1 aspect requirement."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr[None] if arr.ndim == 2 else np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, data: np.ndarray) -> None:
    from PIL import Image

    data = np.asarray(data)
    if data.ndim == 3:
        data = data[0] if data.shape[0] == 1 else data.transpose(1, 2, 0)
    q = np.clip(np.rint(np.nan_to_num(data) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path)


# -- configuration -------------------------------------------------------------


def _parse_rings(text: str) -> tuple[tuple[float, int], ...]:
    rings = []
    for item in text.split(","):
        lat, _, count = item.strip().partition(":")
        if not count:
            raise FormatError(f"ring {item!r} must look like latitude:count")
        rings.append((float(lat), int(count)))
    return tuple(rings)


def _format_rings(rings) -> str:
    return ", ".join(f"{lat:g}:{count}" for lat, count in rings)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise FormatError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


@dataclass
class RunConfig:
    rings: tuple = DEFAULT_RINGS
    fov: float = 80.0
    patch_res: int = 64
    erp_height: int = 64
    enc_channels: tuple = (8, 32, 64)
    dec_channels: tuple = (32, 16, 8)
    embed_hidden: int = 32
    reduce_channels: int = 4
    depth: int = 6
    heads: int = 4
    use_geometry: bool = True
    iters: int = 2
    train_iters: int = 2
    seed: int = 0
    lr: float = 2e-3
    warmup: float = 0.1
    steps: int = 2000
    batch_size: int = 1
    scenes: int = 8

    HELP = {
        "rings": "tangent rings as latitude:count pairs, bottom to top",
        "fov": "patch field of view in degrees",
        "patch_res": "patch side length in pixels (multiple of 8)",
        "erp_height": "ERP height for training and merging (width is twice this)",
        "enc_channels": "encoder stem/stage1/stage2 widths",
        "dec_channels": "decoder stage widths",
        "embed_hidden": "hidden width of the geometric embedding MLP",
        "reduce_channels": "channels per token before flattening",
        "depth": "number of transformer blocks",
        "heads": "attention heads",
        "use_geometry": "fuse geometric embeddings into the encoder",
        "iters": "refinement passes at inference (1..4)",
        "train_iters": "refinement passes unrolled during training",
        "seed": "random seed",
        "lr": "peak Adam learning rate (cosine annealed to 0)",
        "warmup": "fraction of steps with a linear learning-rate warmup",
        "steps": "training steps",
        "batch_size": "scenes per training step",
        "scenes": "number of synthetic training rooms",
    }

    def layout(self) -> PatchLayout:
        return build_patch_layout(self.rings, self.fov, self.patch_res)

    def model_config(self, dtype: str = "float32") -> ModelConfig:
        return ModelConfig(
            n_patches=sum(c for _, c in self.rings),
            patch_res=self.patch_res,
            enc_channels=tuple(self.enc_channels),
            dec_channels=tuple(self.dec_channels),
            embed_hidden=self.embed_hidden,
            reduce_channels=self.reduce_channels,
            depth=self.depth,
            heads=self.heads,
            use_geometry=self.use_geometry,
            dtype=dtype,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            lr=self.lr,
            warmup=self.warmup,
            seed=self.seed,
            batch_size=self.batch_size,
            train_iters=self.train_iters,
            erp_height=self.erp_height,
        )

    def set(self, key: str, value: str) -> None:
        names = {f.name: f for f in fields(self)}
        if key not in names:
            raise FormatError(f"unknown config key {key!r}")
        current = getattr(self, key)
        if key == "rings":
            parsed = _parse_rings(value)
        elif isinstance(current, bool):
            parsed = _parse_bool(value)
        elif isinstance(current, tuple):
            parsed = _parse_ints(value)
        elif isinstance(current, int):
            parsed = int(value)
        else:
            parsed = float(value)
        setattr(self, key, parsed)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "rings":
                v = _format_rings(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        try:
            cfg.set(key.strip(), value.strip())
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    return cfg


def read_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def write_layout_manifest(path, layout: PatchLayout, width: int, height: int) -> None:
    lines = [
        f"fov = {layout.fov:.17g}",
        f"patch_res = {layout.patch_res}",
        f"erp_width = {width}",
        f"erp_height = {height}",
    ]
    for i, p in enumerate(layout.poses):
        lines.append(f"pose {i} {math.degrees(p.lam_c):.17g} {math.degrees(p.phi_c):.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_layout_manifest(path) -> tuple[PatchLayout, int, int]:
    fov = res = width = height = None
    poses = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("pose "):
            _, _, lam, phi = line.split()
            poses.append(TangentPose.from_degrees(float(lam), float(phi)))
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key == "fov":
            fov = float(value)
        elif key == "patch_res":
            res = int(value)
        elif key == "erp_width":
            width = int(value)
        elif key == "erp_height":
            height = int(value)
        else:
            raise FormatError(f"{path}: unknown layout key {key!r}")
    if None in (fov, res, width, height) or not poses:
        raise FormatError(f"{path}: incomplete layout manifest")
    return PatchLayout(tuple(poses), fov, res), width, height
