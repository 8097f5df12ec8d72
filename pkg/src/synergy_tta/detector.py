"""A small dense BEV detector written directly in numpy.

Points are binned into a BEV grid of hand-crafted pillar statistics, passed
through two 3x3 convolutions (with 2x2 average pooling between them) to a
``(H, W, D)`` feature map, then through a per-cell two-layer head producing
class logits and an 8-value box regression. Gradients are computed by hand
so that single-iteration updates and finite-difference checks need no
autodiff framework.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .boxsim import BoxSet, nms
from .errors import LayoutMismatch, TrainingDiverged
from .params import ParamVector

logger = logging.getLogger(__name__)

IN_CHANNELS = 7
REG_DIMS = 8  # dx, dy, z, log l, log w, log h, sin 2yaw, cos 2yaw
PRIOR_LOGIT = -math.log(99.0)  # objectness prior of 0.01


@dataclass(frozen=True)
class DetectorConfig:
    x_range: tuple = (0.0, 32.0)
    y_range: tuple = (-16.0, 16.0)
    input_grid: int = 32
    conv_channels: int = 32
    feature_dim: int = 32
    head_hidden: int = 32
    num_classes: int = 1
    anchors: tuple = ((3.9, 1.6, 1.5), (0.8, 0.6, 1.7))
    ground_z: float = 0.25
    score_threshold: float = 0.1
    nms_iou: float = 0.1
    pos_weight: float = 4.0
    reg_weight: float = 2.0
    learning_rate: float = 1e-2
    grad_clip: float = 10.0
    pseudo_nms_iou: float = 0.3

    @property
    def feature_grid(self):
        return self.input_grid // 2

    @property
    def input_cell(self):
        return (self.x_range[1] - self.x_range[0]) / self.input_grid

    @property
    def output_cell(self):
        return (self.x_range[1] - self.x_range[0]) / self.feature_grid

    def manifest(self):
        c0, c1, d, h = IN_CHANNELS, self.conv_channels, self.feature_dim, self.head_hidden
        out = self.num_classes + REG_DIMS
        return (
            ("conv1.weight", (c0, 3, 3, c1)), ("conv1.bias", (c1,)),
            ("conv2.weight", (c1, 3, 3, d)), ("conv2.bias", (d,)),
            ("head1.weight", (d, h)), ("head1.bias", (h,)),
            ("head2.weight", (h, out)), ("head2.bias", (out,)),
        )

    @classmethod
    def from_dict(cls, d):
        d = {k: tuple(tuple(x) if isinstance(x, list) else x for x in v)
             if isinstance(v, list) else v for k, v in dict(d).items()}
        return cls(**d)


def init_params(cfg, seed=0):
    """He-initialized parameters."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in cfg.manifest():
        if name.endswith("bias"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
    tensors["head2.weight"] *= 0.1
    return ParamVector.from_tensors(tensors)


def zero_params(cfg):
    size = sum(int(np.prod(s)) for _, s in cfg.manifest())
    return ParamVector(cfg.manifest(), np.zeros(size, np.float32))


def check_layout(params, cfg):
    if tuple(params.manifest) != tuple(cfg.manifest()):
        raise LayoutMismatch("parameters do not match the detector architecture")


# ---------------------------------------------------------------------------
# input encoding


def bev_features(points, cfg):
    """(G, G, 7) grid of pillar statistics for one point cloud.

    Channels: log point count, max height, mean height, mean x and y offset
    inside the cell, x and y spread. Points below ``ground_z`` are ignored.
    """
    g = cfg.input_grid
    cell = cfg.input_cell
    pts = np.asarray(points, dtype=np.float64)
    pts = pts[pts[:, 2] > cfg.ground_z]
    fx = (pts[:, 0] - cfg.x_range[0]) / cell
    fy = (pts[:, 1] - cfg.y_range[0]) / cell
    ix = np.floor(fx).astype(np.int64)
    iy = np.floor(fy).astype(np.int64)
    ok = (ix >= 0) & (ix < g) & (iy >= 0) & (iy < g)
    ix, iy, fx, fy, z = ix[ok], iy[ok], fx[ok], fy[ok], pts[ok, 2]
    flat = ix * g + iy
    n = g * g
    count = np.bincount(flat, minlength=n).astype(np.float64)
    ox = fx - ix - 0.5
    oy = fy - iy - 0.5
    sx = np.bincount(flat, ox, n)
    sy = np.bincount(flat, oy, n)
    sz = np.bincount(flat, z, n)
    sxx = np.bincount(flat, ox * ox, n)
    syy = np.bincount(flat, oy * oy, n)
    zmax = np.zeros(n)
    np.maximum.at(zmax, flat, z)
    safe = np.maximum(count, 1.0)
    mx, my = sx / safe, sy / safe
    feats = np.stack([
        np.log1p(count) / 3.0,
        zmax / 2.0,
        sz / safe / 2.0,
        mx * 2.0,
        my * 2.0,
        np.sqrt(np.maximum(sxx / safe - mx * mx, 0.0)) * 3.0,
        np.sqrt(np.maximum(syy / safe - my * my, 0.0)) * 3.0,
    ], axis=-1)
    return feats.reshape(g, g, IN_CHANNELS)


def encode(points_list, cfg):
    """Stack BEV grids for a list of point clouds into (B, G, G, 7)."""
    return np.stack([bev_features(p, cfg) for p in points_list])


# ---------------------------------------------------------------------------
# layers


def _conv_cols(x):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    return win.reshape(b * h * w, c * 9)


def _conv_forward(x, w, bias):
    b, h, wd, _ = x.shape
    cols = _conv_cols(x)
    out = cols @ w.reshape(-1, w.shape[-1]) + bias
    return out.reshape(b, h, wd, -1), cols


def _conv_backward(dout, cols, w, x_shape):
    b, h, wd, c = x_shape
    co = w.shape[-1]
    d2 = dout.reshape(-1, co)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, co).T).reshape(b, h, wd, c, 3, 3)
    dxp = np.zeros((b, h + 2, wd + 2, c))
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki:ki + h, kj:kj + wd, :] += dcols[..., ki, kj]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _pool(x):
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _unpool(d):
    return np.repeat(np.repeat(d, 2, axis=1), 2, axis=2) / 4.0


def forward(t, x):
    """Full forward pass; ``t`` maps tensor names to float64 arrays.

    Returns the output tensor (B, H, W, classes + 8) and a cache for backward.
    """
    a1, cols1 = _conv_forward(x, t["conv1.weight"], t["conv1.bias"])
    h1 = np.maximum(a1, 0.0)
    p1 = _pool(h1)
    a2, cols2 = _conv_forward(p1, t["conv2.weight"], t["conv2.bias"])
    z = np.maximum(a2, 0.0)
    a3 = z @ t["head1.weight"] + t["head1.bias"]
    h3 = np.maximum(a3, 0.0)
    out = h3 @ t["head2.weight"] + t["head2.bias"]
    cache = (x, a1, cols1, p1, a2, cols2, z, a3, h3)
    return out, cache


def backward(t, dout, cache):
    x, a1, cols1, p1, a2, cols2, z, a3, h3 = cache
    g = {}
    co = dout.shape[-1]
    g["head2.weight"] = h3.reshape(-1, h3.shape[-1]).T @ dout.reshape(-1, co)
    g["head2.bias"] = dout.reshape(-1, co).sum(axis=0)
    da3 = (dout @ t["head2.weight"].T) * (a3 > 0)
    g["head1.weight"] = z.reshape(-1, z.shape[-1]).T @ da3.reshape(-1, da3.shape[-1])
    g["head1.bias"] = da3.reshape(-1, da3.shape[-1]).sum(axis=0)
    dz = da3 @ t["head1.weight"].T
    da2 = dz * (a2 > 0)
    dp1, g["conv2.weight"], g["conv2.bias"] = _conv_backward(da2, cols2, t["conv2.weight"], p1.shape)
    da1 = _unpool(dp1) * (a1 > 0)
    _, g["conv1.weight"], g["conv1.bias"] = _conv_backward(da1, cols1, t["conv1.weight"], x.shape)
    return g


# ---------------------------------------------------------------------------
# targets, loss and decoding


def _cell_of(row, cfg):
    cell = cfg.output_cell
    fx = (row[0] - cfg.x_range[0]) / cell
    fy = (row[1] - cfg.y_range[0]) / cell
    return fx, fy, int(math.floor(fx)), int(math.floor(fy))


def build_targets(labels, cfg, ignore=None):
    """Dense class targets, regression targets, positive and loss-weight masks.

    Cells holding the center of an ``ignore`` box get zero classification
    weight unless they are also positive.
    """
    g = cfg.feature_grid
    b = len(labels)
    cls_t = np.zeros((b, g, g, cfg.num_classes))
    reg_t = np.zeros((b, g, g, REG_DIMS))
    pos = np.zeros((b, g, g), dtype=bool)
    care = np.ones((b, g, g))
    anchors = np.asarray(cfg.anchors, dtype=np.float64)
    for bi, boxes in enumerate(ignore or ()):
        for row in boxes.boxes:
            _, _, i, j = _cell_of(row, cfg)
            if 0 <= i < g and 0 <= j < g:
                care[bi, i, j] = 0.0
    for bi, boxes in enumerate(labels):
        for row, label in zip(boxes.boxes, boxes.labels):
            if label >= cfg.num_classes:
                continue
            fx, fy, i, j = _cell_of(row, cfg)
            if not (0 <= i < g and 0 <= j < g):
                continue
            a = anchors[label]
            cls_t[bi, i, j, label] = 1.0
            pos[bi, i, j] = True
            care[bi, i, j] = 1.0
            reg_t[bi, i, j] = (
                fx - i - 0.5, fy - j - 0.5, row[2],
                math.log(row[3] / a[0]), math.log(row[4] / a[1]), math.log(row[5] / a[2]),
                math.sin(2 * row[6]), math.cos(2 * row[6]),
            )
    return cls_t, reg_t, pos, care


def loss_from_output(out, cls_t, reg_t, pos, cfg, care=None):
    """Detection loss and its gradient with respect to the head output.

    Weighted binary cross-entropy on every cell plus smooth-L1 regression on
    positive cells, both normalized by the number of positives.
    """
    nc = cfg.num_classes
    logits = out[..., :nc] + PRIOR_LOGIT
    reg = out[..., nc:]
    npos = max(1.0, float(pos.sum()))
    weight = np.where(cls_t > 0, cfg.pos_weight, 1.0)
    if care is not None:
        weight = weight * care[..., None]
    bce = np.maximum(logits, 0) - logits * cls_t + np.log1p(np.exp(-np.abs(logits)))
    p = 1.0 / (1.0 + np.exp(-logits))
    cls_loss = float(np.sum(weight * bce)) / npos
    dlogits = weight * (p - cls_t) / npos

    diff = (reg - reg_t) * pos[..., None]
    ad = np.abs(diff)
    huber = np.where(ad < 1.0, 0.5 * diff * diff, ad - 0.5)
    reg_loss = cfg.reg_weight * float(np.sum(huber)) / npos
    dreg = cfg.reg_weight * np.clip(diff, -1.0, 1.0) / npos

    dout = np.concatenate([dlogits, dreg], axis=-1)
    return cls_loss + reg_loss, dout


def loss_and_grad(params, x, labels, cfg, ignore=None):
    """Training loss and flat float64 gradient for encoded inputs ``x``."""
    t = params.tensors() if isinstance(params, ParamVector) else params
    out, cache = forward(t, x)
    cls_t, reg_t, pos, care = build_targets(labels, cfg, ignore)
    loss, dout = loss_from_output(out, cls_t, reg_t, pos, cfg, care)
    g = backward(t, dout, cache)
    flat = np.concatenate([g[name].reshape(-1) for name, _ in cfg.manifest()])
    return loss, flat


def decode(out, cfg, threshold=None):
    """Per-scene BoxSets from the head output, after thresholding and NMS."""
    threshold = cfg.score_threshold if threshold is None else threshold
    nc = cfg.num_classes
    g = cfg.feature_grid
    cell = cfg.output_cell
    scores = 1.0 / (1.0 + np.exp(-(out[..., :nc] + PRIOR_LOGIT)))
    anchors = np.asarray(cfg.anchors, dtype=np.float64)
    results = []
    for bi in range(out.shape[0]):
        ii, jj, cc = np.nonzero(scores[bi] >= threshold)
        if len(ii) == 0:
            results.append(BoxSet())
            continue
        r = out[bi, ii, jj, nc:]
        a = anchors[cc]
        x = cfg.x_range[0] + (ii + 0.5 + r[:, 0]) * cell
        y = cfg.y_range[0] + (jj + 0.5 + r[:, 1]) * cell
        size = a * np.exp(np.clip(r[:, 3:6], -3.0, 3.0))
        yaw = 0.5 * np.arctan2(r[:, 6], r[:, 7])
        boxes = np.column_stack([x, y, r[:, 2], size, yaw])
        found = BoxSet(boxes, cc, scores[bi, ii, jj, cc])
        results.append(found[nms(found, cfg.nms_iou)] if cfg.nms_iou < 1.0 else found)
    return results


# ---------------------------------------------------------------------------
# public operations


def infer_encoded(params, x, cfg):
    """List of (feature_map, BoxSet) for pre-encoded inputs."""
    check_layout(params, cfg)
    t = params.tensors()
    out, cache = forward(t, x)
    z = cache[6]
    boxes = decode(out, cfg)
    return [(z[i], boxes[i]) for i in range(len(boxes))]


def infer(params, batch, cfg):
    """Run the detector on a SceneBatch (or a list of point arrays)."""
    points = batch.inputs if hasattr(batch, "inputs") else batch
    return infer_encoded(params, encode(points, cfg), cfg)


def pseudo_label(preds, threshold=0.6, nms_iou=0.3):
    """Keep confident predictions and deduplicate them with NMS."""
    out = []
    for boxes in preds:
        kept = boxes[boxes.scores >= threshold]
        out.append(kept[nms(kept, nms_iou)] if len(kept) else kept)
    return out


def uncertain_boxes(preds, low, high):
    """Predictions scored in ``[low, high)``; their cells are left out of the loss."""
    return [boxes[(boxes.scores >= low) & (boxes.scores < high)] for boxes in preds]


STRONG = (0.9, 1.1)
WEAK = (0.95, 1.05)


def augment_world_scale(points_list, labels, mode="strong", rng=None, scale=None):
    """Scale every point and box by one factor drawn from the mode's range."""
    if scale is None:
        lo, hi = STRONG if mode == "strong" else WEAK
        rng = rng if rng is not None else np.random.default_rng()
        scale = float(rng.uniform(lo, hi))
    points = [np.asarray(p) * scale for p in points_list]
    labels = None if labels is None else [b.scaled(scale) for b in labels]
    return points, labels, scale


def train_step(params, points_list, labels, cfg, rng=None, lr=None, augment=True,
               ignore=None):
    """One gradient-descent step on (strong-augmented) pseudo-labelled scenes.

    Returns the new parameters. Empty labels leave the parameters unchanged;
    a non-finite loss or update raises TrainingDiverged.
    """
    check_layout(params, cfg)
    lr = cfg.learning_rate if lr is None else lr
    if sum(len(b) for b in labels) == 0 or lr == 0.0:
        return params
    if augment:
        points_list, labels, scale = augment_world_scale(points_list, labels, "strong", rng)
        if ignore is not None:
            ignore = [b.scaled(scale) for b in ignore]
    x = encode(points_list, cfg)
    loss, grad = loss_and_grad(params, x, labels, cfg, ignore)
    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise TrainingDiverged(f"non-finite loss {loss}")
    norm = float(np.linalg.norm(grad))
    if cfg.grad_clip and norm > cfg.grad_clip:
        grad = grad * (cfg.grad_clip / norm)
    new = params.values.astype(np.float64) - lr * grad
    if not np.all(np.isfinite(new)):
        raise TrainingDiverged("parameters became non-finite")
    return params.with_values(new)


@dataclass
class Adam:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step: int = 0

    def update(self, values, grad):
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mh = self.m / (1 - self.beta1 ** self.step)
        vh = self.v / (1 - self.beta2 ** self.step)
        return values - self.lr * mh / (np.sqrt(vh) + self.eps)


def pretrain(cfg, scenes, steps=1500, batch_size=4, seed=0, lr=3e-3, log_every=0):
    """Supervised source-domain training with Adam on ground-truth boxes.

    ``scenes`` is a list of (points, gt BoxSet) pairs sampled with
    replacement; each minibatch gets a weak world-scaling augmentation and a
    random lateral flip.
    """
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    values = params.values.astype(np.float64)
    opt = Adam(lr=lr)
    for step in range(steps):
        idx = rng.integers(0, len(scenes), batch_size)
        pts, labels = [], []
        for i in idx:
            p, b = scenes[i]
            if rng.random() < 0.5:
                p = p * np.array([1.0, -1.0, 1.0])
                bb = b.boxes.copy()
                bb[:, 1] *= -1
                bb[:, 6] *= -1
                b = BoxSet(bb, b.labels, b.scores)
            pts.append(p)
            labels.append(b)
        pts, labels, _ = augment_world_scale(pts, labels, "weak", rng)
        x = encode(pts, cfg)
        loss, grad = loss_and_grad(params.with_values(values), x, labels, cfg)
        opt.lr = lr * 0.5 * (1.0 + math.cos(math.pi * step / steps))
        values = opt.update(values, grad)
        if log_every and step % log_every == 0:
            logger.info("pretrain step %d loss %.4f", step, loss)
    return params.with_values(values)
