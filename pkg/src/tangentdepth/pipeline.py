"""End-to-end inference with iterative rho refinement, and training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .embedding import _static_attrs, attrs_with_rho, embed, sample_rho
from .geometry import PatchLayout
from .losses import LossReport, berhu, berhu_border, total_loss
from .model import Adam, ModelConfig, cosine_lr, forward_model, grads_of, init_params, zero_grads
from .patches import ErpImage, ProjectionTables, build_tables, extract_patches, merge_tensor
from .scenes import SceneSpec, render_scene

log = logging.getLogger(__name__)

MAX_ITERS = 4


class TrainingDiverged(RuntimeError):
    pass


def run_iterations(patches, params: dict, cfg: ModelConfig, tables: ProjectionTables, iters: int, first_geo=None):
    """Run ``iters`` passes over a (B*N, C, R, R) stack.

    Pass 1 embeds attributes with rho = 1; pass k > 1 samples rho from the
    merged depth of pass k-1 (gradients flow through it). Returns a list of
    ``(merged, valid, depth, conf)`` per pass, merged shaped (B, H, W).
    """
    if not 1 <= iters <= MAX_ITERS:
        raise ValueError(f"iters must be in 1..{MAX_ITERS}, got {iters}")
    layout = tables.layout
    f = cfg.feat_res
    outs = []
    geo = first_geo
    if geo is None and cfg.use_geometry:
        geo = embed(ag.Tensor(_static_attrs(layout, f).astype(cfg.np_dtype)), params)
    for k in range(iters):
        if k > 0 and cfg.use_geometry:
            merged, valid = outs[-1][:2]
            rho = sample_rho(layout, f, merged, valid)
            geo = embed(attrs_with_rho(layout, f, rho), params)
        depth, conf = forward_model(patches, None, params, cfg, geo_feats=geo)
        merged, valid = merge_tensor(depth, conf, tables)
        outs.append((merged, valid, depth, conf))
    return outs


class Predictor:
    """Holds params, layout and tables; caches first-pass geometric features,
    which do not depend on the input image."""

    def __init__(self, params: dict, cfg: ModelConfig, layout: PatchLayout):
        if len(layout) != cfg.n_patches or layout.patch_res != cfg.patch_res:
            raise ValueError("layout does not match model config")
        self.params, self.cfg, self.layout = params, cfg, layout
        self._tables: dict[tuple[int, int], ProjectionTables] = {}
        self._geo = None

    def tables(self, width: int, height: int) -> ProjectionTables:
        key = (width, height)
        if key not in self._tables:
            self._tables[key] = build_tables(self.layout, width, height)
        return self._tables[key]

    def first_geometry(self):
        if self._geo is None and self.cfg.use_geometry:
            with ag.no_grad():
                attrs = _static_attrs(self.layout, self.cfg.feat_res).astype(self.cfg.np_dtype)
                self._geo = embed(ag.Tensor(attrs), self.params)
        return self._geo

    def predict_all(self, rgb: ErpImage, iters: int) -> list[ErpImage]:
        tables = self.tables(rgb.width, rgb.height)
        patches = extract_patches(rgb.data.astype(self.cfg.np_dtype), tables)
        with ag.no_grad():
            outs = run_iterations(patches, self.params, self.cfg, tables, iters, self.first_geometry())
        result = []
        for merged, valid, _, _ in outs:
            data = merged.data[0].copy()
            data[~valid] = np.nan
            result.append(ErpImage(data[None], valid))
        return result

    def __call__(self, rgb: ErpImage, iters: int = 2) -> ErpImage:
        return self.predict_all(rgb, iters)[-1]


def infer(rgb: ErpImage, params: dict, layout: PatchLayout, iters: int, cfg: ModelConfig) -> ErpImage:
    """Depth of the final pass; every pass reuses the same parameters."""
    return Predictor(params, cfg, layout)(rgb, iters)


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 2e-3
    warmup: float = 0.1  # fraction of steps
    seed: int = 0
    batch_size: int = 1
    train_iters: int = 2
    erp_height: int = 64


@dataclass
class TrainingSet:
    """Pre-extracted patches and ground truth for a list of scenes."""

    scenes: list[SceneSpec]
    patches: np.ndarray  # (S, N, 3, R, R)
    gt: np.ndarray  # (S, H, W)
    rgb: list[ErpImage] = field(repr=False)
    tables: ProjectionTables = field(repr=False)

    @classmethod
    def render(cls, scenes: list[SceneSpec], layout: PatchLayout, erp_height: int, dtype) -> "TrainingSet":
        tables = build_tables(layout, 2 * erp_height, erp_height)
        rgbs, patches, gts = [], [], []
        for spec in scenes:
            rgb, depth = render_scene(spec, 2 * erp_height, erp_height)
            rgbs.append(rgb)
            patches.append(extract_patches(rgb.data.astype(dtype), tables))
            gts.append(depth.data[0].astype(dtype))
        return cls(list(scenes), np.stack(patches), np.stack(gts), rgbs, tables)


def training_step(batch_patches, batch_gt, params, cfg, tables, iters):
    """Forward all passes, sum the BerHu losses, backpropagate."""
    b = batch_gt.shape[0]
    x = batch_patches.reshape(b * cfg.n_patches, *batch_patches.shape[2:])
    outs = run_iterations(x, params, cfg, tables, iters)
    valid = outs[0][1]
    mask = np.broadcast_to(valid, batch_gt.shape)
    losses = [berhu(o[0], batch_gt, mask) for o in outs]
    borders = [berhu_border(o[0], batch_gt, mask) for o in outs]
    total = total_loss(losses)
    zero_grads(params)
    ag.backward(total)
    return [float(l.data) for l in losses], float(total.data), borders, int(mask.sum())


def train(scenes: list[SceneSpec], layout: PatchLayout, cfg: ModelConfig, tcfg: TrainConfig, callback=None):
    """Adam with a cosine schedule over ``tcfg.steps`` steps.

    Batches cycle through the scenes in a seeded shuffled order. Returns
    ``(params, trace)``; raises :class:`TrainingDiverged` on a non-finite loss.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    data = TrainingSet.render(scenes, layout, tcfg.erp_height, cfg.np_dtype)
    params = init_params(cfg, tcfg.seed)
    opt = Adam(params)
    rng = np.random.default_rng(tcfg.seed)
    order: list[int] = []
    trace = []
    warmup = int(round(tcfg.warmup * tcfg.steps))
    for step in range(tcfg.steps):
        while len(order) < tcfg.batch_size:
            order.extend(rng.permutation(len(scenes)).tolist())
        pick, order = order[: tcfg.batch_size], order[tcfg.batch_size :]
        per_it, total, borders, count = training_step(
            data.patches[pick], data.gt[pick], params, cfg, data.tables, tcfg.train_iters
        )
        if not math.isfinite(total):
            raise TrainingDiverged(f"loss became {total} at step {step} (scenes {pick})")
        lr = cosine_lr(step, tcfg.steps, tcfg.lr, warmup)
        opt.step(params, grads_of(params), lr)
        report = LossReport(per_it, total, borders, count, step, lr)
        trace.append(report)
        if callback is not None:
            callback(report)
    return params, trace


def evaluate(params, layout: PatchLayout, cfg: ModelConfig, scenes: list[SceneSpec], erp_height: int, iters: int):
    """Per-pass metrics over the given scenes, pooled over all valid pixels."""
    from .losses import metrics

    pred_by_pass: list[list[np.ndarray]] = [[] for _ in range(iters)]
    gts, masks = [], []
    predictor = Predictor(params, cfg, layout)
    for spec in scenes:
        rgb, depth = render_scene(spec, 2 * erp_height, erp_height)
        for k, out in enumerate(predictor.predict_all(rgb, iters)):
            pred_by_pass[k].append(np.nan_to_num(out.data[0], nan=1.0))
        gts.append(depth.data[0])
        masks.append(out.valid)
    gt, mask = np.stack(gts), np.stack(masks)
    return [metrics(np.stack(p), gt, mask) for p in pred_by_pass]


def overlap_feature_gap(params, layout: PatchLayout, cfg: ModelConfig, rgb: ErpImage) -> tuple[float, float]:
    """How much two overlapping patches disagree about the same ERP pixel.

    Stage-1 features (fused with the geometric embedding when the config
    uses it) are sampled bilinearly at every pixel seen by at least two
    patches. Returns the mean L2 distance between the first two samples and
    that distance divided by the mean feature norm.
    """
    from dataclasses import replace

    from .model import encode

    tables = build_tables(layout, rgb.width, rgb.height)
    patches = extract_patches(rgb.data.astype(cfg.np_dtype), tables)
    feat = build_tables(replace(layout, patch_res=cfg.feat_res), rgb.width, rgb.height)
    both = feat.inv_valid[:, 0] & feat.inv_valid[:, 1]
    with ag.no_grad():
        s1 = encode(patches, Predictor(params, cfg, layout).first_geometry(), params)[1].data
    flat = s1.transpose(1, 0, 2, 3).reshape(s1.shape[1], -1)
    samples = (flat[:, feat.merge_idx] * feat.merge_w).sum(-1).reshape(len(flat), -1, feat.inv_valid.shape[1])
    a, b = samples[:, both, 0], samples[:, both, 1]
    gap = float(np.linalg.norm(a - b, axis=0).mean())
    scale = 0.5 * float(np.linalg.norm(a, axis=0).mean() + np.linalg.norm(b, axis=0).mean())
    return gap, gap / scale
