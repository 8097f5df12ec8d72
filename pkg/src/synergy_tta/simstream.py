"""Synthetic LiDAR scene streams with domain shift and corruption analogs.

Scenes are produced by casting a fan of sensor rays (beams x azimuth steps)
against a flat ground plane, car-like cuboids (the labelled objects) and
unlabelled clutter. The target domain differs from the source in object size
statistics and beam count; corruptions then perturb the returned points.
"""

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import List

import numpy as np

from .boxsim import BoxSet
from .errors import ConfigError

CORRUPTIONS = ("none", "fog", "wet", "snow", "motion_blur", "beam_missing",
               "crosstalk", "incomplete_echo", "cross_sensor")
SEVERITIES = ("light", "moderate", "heavy")
_SEV = {"light": 0, "moderate": 1, "heavy": 2}

# per-corruption magnitudes indexed by severity (light, moderate, heavy)
FOG_ALPHA = (0.015, 0.035, 0.06)        # dropout = 1 - exp(-alpha * range)
FOG_JITTER = (0.02, 0.04, 0.08)
WET_DROP = (0.15, 0.3, 0.45)
WET_JITTER = (0.01, 0.02, 0.04)
SNOW_ALPHA = (0.01, 0.025, 0.045)
SNOW_FLAKES = (0.01, 0.025, 0.05)       # fraction of points re-emitted as flakes
MOTION_SIGMA = (0.05, 0.12, 0.25)
BEAM_DROP = (0.2, 0.35, 0.5)            # fraction of beams removed
CROSSTALK_FRAC = (0.01, 0.03, 0.06)
ECHO_DROP = (0.3, 0.5, 0.7)             # object-surface dropout
SENSOR_KEEP = (0.75, 0.6, 0.5)          # fraction of beams kept after resampling

GROUND, OBJECT, CLUTTER, NOISE = 0, 1, 2, 3


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "none"
    severity: str = "moderate"

    def __post_init__(self):
        if self.kind not in CORRUPTIONS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise ConfigError(f"unknown severity {self.severity!r}")


@dataclass(frozen=True)
class DomainConfig:
    """Object and sensor statistics of one domain."""

    size_mean: tuple = (3.9, 1.6, 1.5)
    size_std: tuple = (0.2, 0.08, 0.06)
    size_scale: tuple = (1.0, 1.0, 1.0)
    beams: int = 48
    azimuth_steps: int = 540


@dataclass(frozen=True)
class StreamConfig:
    x_range: tuple = (0.0, 32.0)
    y_range: tuple = (-16.0, 16.0)
    sensor_height: float = 1.8
    elevation_range: tuple = (-25.0, 3.0)   # degrees
    max_range: float = 45.0
    range_noise: float = 0.01
    num_batches: int = 32
    batch_size: int = 2
    objects_per_scene: tuple = (2, 6)
    clutter_per_scene: tuple = (2, 6)
    second_class: bool = False
    second_class_size: tuple = (0.8, 0.6, 1.7)
    domain: str = "target"
    source: DomainConfig = field(default_factory=DomainConfig)
    target: DomainConfig = field(default_factory=lambda: DomainConfig(
        size_scale=(1.1, 1.05, 1.0), beams=32))
    # corruption schedule: list of (kind, severity, number of batches), cycled
    schedule: tuple = (("none", "moderate", 1),)

    def validate(self):
        lo, hi = self.objects_per_scene
        if self.num_batches < 1 or self.batch_size < 1:
            raise ConfigError("num_batches and batch_size must be positive")
        if not 0 <= lo <= hi:
            raise ConfigError("objects_per_scene must be an ordered non-negative range")
        if self.domain not in ("source", "target"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.x_range[0] >= self.x_range[1] or self.y_range[0] >= self.y_range[1]:
            raise ConfigError("empty scene region")
        for dom in (self.source, self.target):
            if dom.beams < 1 or dom.azimuth_steps < 1:
                raise ConfigError("beams and azimuth_steps must be positive")
            if min(dom.size_mean) <= 0 or min(dom.size_scale) <= 0:
                raise ConfigError("object sizes must be positive")
        if not self.schedule:
            raise ConfigError("corruption schedule is empty")
        for kind, sev, n in self.schedule:
            CorruptionSpec(kind, sev)
            if n < 1:
                raise ConfigError("schedule segment lengths must be positive")
        return self

    def corruption_at(self, t):
        period = sum(n for _, _, n in self.schedule)
        pos = t % period
        for kind, sev, n in self.schedule:
            if pos < n:
                return CorruptionSpec(kind, sev)
            pos -= n
        raise AssertionError("unreachable")

    @property
    def domain_config(self):
        return self.source if self.domain == "source" else self.target

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("source", "target"):
            if key in d and isinstance(d[key], dict):
                d[key] = DomainConfig(**{k: tuple(v) if isinstance(v, list) else v
                                         for k, v in d[key].items()})
        if "schedule" in d:
            d["schedule"] = tuple(tuple(s) for s in d["schedule"])
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)


@dataclass
class Scene:
    """One point cloud. ``kinds`` and ``beam`` tag each point's origin."""

    points: np.ndarray
    gt_boxes: BoxSet
    kinds: np.ndarray
    beam: np.ndarray


@dataclass
class SceneBatch:
    """A batch of scenes.

    Adaptation code should only consume ``inputs``; ground truth is read by
    the evaluator through ``ground_truth``.
    """

    batch_index: int
    scenes: List[Scene]
    corruption: CorruptionSpec

    @property
    def inputs(self):
        return [s.points for s in self.scenes]

    @property
    def ground_truth(self):
        return [s.gt_boxes for s in self.scenes]

    def __len__(self):
        return len(self.scenes)


# ---------------------------------------------------------------------------
# scene synthesis


def _sample_boxes(rng, cfg, dom):
    n = int(rng.integers(cfg.objects_per_scene[0], cfg.objects_per_scene[1] + 1))
    boxes, labels = [], []
    placed = []  # (x, y, radius)
    mean = np.asarray(dom.size_mean) * np.asarray(dom.size_scale)
    std = np.asarray(dom.size_std) * np.asarray(dom.size_scale)
    x0, x1 = cfg.x_range
    y0, y1 = cfg.y_range
    for _ in range(n):
        cls = 1 if (cfg.second_class and rng.random() < 0.3) else 0
        if cls == 0:
            size = rng.normal(mean, std)
        else:
            size = np.asarray(cfg.second_class_size) * rng.normal(1.0, 0.05, 3)
        size = np.maximum(size, 0.2)
        r = 0.5 * math.hypot(size[0], size[1])
        for _attempt in range(30):
            x = rng.uniform(x0 + 4.0, x1 - r - 0.5)
            y = rng.uniform(y0 + r + 0.5, y1 - r - 0.5)
            if all(math.hypot(x - px, y - py) > r + pr + 0.5 for px, py, pr in placed):
                break
        else:
            continue
        yaw = rng.uniform(-math.pi / 2, math.pi / 2)
        placed.append((x, y, r))
        boxes.append([x, y, size[2] / 2.0, size[0], size[1], size[2], yaw])
        labels.append(cls)
    clutter = []
    nc = int(rng.integers(cfg.clutter_per_scene[0], cfg.clutter_per_scene[1] + 1))
    for _ in range(nc):
        kind = rng.random()
        if kind < 0.5:   # pole
            size = np.array([0.3, 0.3, rng.uniform(1.5, 3.0)])
        else:            # bush / barrier
            size = np.array([rng.uniform(0.6, 2.5), rng.uniform(0.4, 1.2), rng.uniform(0.5, 1.2)])
        r = 0.5 * math.hypot(size[0], size[1])
        for _attempt in range(30):
            x = rng.uniform(x0 + 3.0, x1 - 0.5)
            y = rng.uniform(y0 + 0.5, y1 - 0.5)
            if all(math.hypot(x - px, y - py) > r + pr + 0.3 for px, py, pr in placed):
                break
        else:
            continue
        placed.append((x, y, r))
        clutter.append([x, y, size[2] / 2.0, *size, rng.uniform(-math.pi, math.pi)])
    boxes = np.array(boxes, dtype=np.float64).reshape(-1, 7)
    gt = BoxSet(boxes, np.array(labels, dtype=np.int64), np.ones(len(boxes)))
    return gt, np.array(clutter, dtype=np.float64).reshape(-1, 7)


def _ray_box_t(origin, dirs, boxes):
    """Entry distance of every ray into every box; inf on a miss. (R, B)."""
    if len(boxes) == 0:
        return np.full((len(dirs), 0), np.inf)
    c, s = np.cos(boxes[:, 6]), np.sin(boxes[:, 6])
    o = origin[None, :] - boxes[:, :3]                      # (B, 3)
    ox = c * o[:, 0] + s * o[:, 1]
    oy = -s * o[:, 0] + c * o[:, 1]
    oz = o[:, 2]
    dx = dirs[:, None, 0] * c + dirs[:, None, 1] * s          # (R, B)
    dy = -dirs[:, None, 0] * s + dirs[:, None, 1] * c
    dz = np.broadcast_to(dirs[:, None, 2], dx.shape)
    half = boxes[:, 3:6] / 2.0
    t_near = np.full(dx.shape, -np.inf)
    t_far = np.full(dx.shape, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for d, oc, h in ((dx, ox, half[:, 0]), (dy, oy, half[:, 1]), (dz, oz, half[:, 2])):
            inv = 1.0 / d
            t1 = (-h - oc) * inv
            t2 = (h - oc) * inv
            lo = np.minimum(t1, t2)
            hi = np.maximum(t1, t2)
            parallel = d == 0
            inside = np.abs(oc) <= h
            lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def cast_scene(rng, cfg, dom, gt, clutter):
    """Cast the sensor's rays; returns (points, kinds, beam index)."""
    el0, el1 = np.deg2rad(cfg.elevation_range)
    elev = np.linspace(el0, el1, dom.beams)
    az = np.linspace(-math.pi / 2, math.pi / 2, dom.azimuth_steps)
    az = az + rng.uniform(-0.5, 0.5) * (az[1] - az[0])
    ee, aa = np.meshgrid(elev, az, indexing="ij")
    beam = np.broadcast_to(np.arange(dom.beams)[:, None], ee.shape).reshape(-1)
    dirs = np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], -1).reshape(-1, 3)
    origin = np.array([0.0, 0.0, cfg.sensor_height])

    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[:, 2] < 0, cfg.sensor_height / -dirs[:, 2], np.inf)
    solids = np.concatenate([gt.boxes, clutter], axis=0)
    t_box = _ray_box_t(origin, dirs, solids)
    kinds = np.full(len(dirs), GROUND)
    t = t_ground
    if t_box.shape[1]:
        j = np.argmin(t_box, axis=1)
        tb = t_box[np.arange(len(dirs)), j]
        closer = tb < t
        t = np.where(closer, tb, t)
        kinds = np.where(closer, np.where(j < len(gt), OBJECT, CLUTTER), kinds)
    keep = np.isfinite(t) & (t <= cfg.max_range)
    t = t[keep] + rng.normal(0.0, cfg.range_noise, keep.sum())
    pts = origin + dirs[keep] * t[:, None]
    kinds = kinds[keep]
    beam = beam[keep]
    inside = ((pts[:, 0] >= cfg.x_range[0]) & (pts[:, 0] < cfg.x_range[1])
              & (pts[:, 1] >= cfg.y_range[0]) & (pts[:, 1] < cfg.y_range[1]))
    return pts[inside], kinds[inside], beam[inside]


def make_scene(rng, cfg):
    dom = cfg.domain_config
    gt, clutter = _sample_boxes(rng, cfg, dom)
    pts, kinds, beam = cast_scene(rng, cfg, dom, gt, clutter)
    return Scene(pts, gt, kinds, beam)


# ---------------------------------------------------------------------------
# corruptions


def _keep(scene, mask):
    return Scene(scene.points[mask], scene.gt_boxes, scene.kinds[mask], scene.beam[mask])


def _add(scene, pts, kind):
    n = len(pts)
    return Scene(np.concatenate([scene.points, pts]), scene.gt_boxes,
                 np.concatenate([scene.kinds, np.full(n, kind)]),
                 np.concatenate([scene.beam, np.full(n, -1)]))


def apply_corruption(scene, spec, rng, sensor_height=1.8):
    """Return a corrupted copy of ``scene``. Ground-truth boxes are untouched."""
    if spec.kind == "none":
        return scene
    sev = _SEV[spec.severity]
    pts = scene.points
    rng_xy = np.hypot(pts[:, 0], pts[:, 1])
    n = len(pts)

    if spec.kind in ("fog", "snow"):
        alpha = (FOG_ALPHA if spec.kind == "fog" else SNOW_ALPHA)[sev]
        keep = rng.random(n) >= 1.0 - np.exp(-alpha * rng_xy)
        out = _keep(scene, keep)
        jitter = FOG_JITTER[sev] if spec.kind == "fog" else FOG_JITTER[0]
        out.points = out.points + rng.normal(0.0, jitter, out.points.shape)
        if spec.kind == "snow":
            m = int(SNOW_FLAKES[sev] * n)
            r = rng.uniform(1.5, 12.0, m)
            a = rng.uniform(-math.pi / 2, math.pi / 2, m)
            flakes = np.stack([r * np.cos(a), r * np.sin(a),
                               rng.uniform(0.0, sensor_height + 1.0, m)], 1)
            out = _add(out, flakes, NOISE)
        return out
    if spec.kind == "wet":
        # wet ground reflects away: ground returns drop harder than objects
        p = np.where(scene.kinds == GROUND, 1.5 * WET_DROP[sev], 0.5 * WET_DROP[sev])
        out = _keep(scene, rng.random(n) >= p)
        out.points = out.points + rng.normal(0.0, WET_JITTER[sev], out.points.shape)
        return out
    if spec.kind == "motion_blur":
        out = _keep(scene, np.ones(n, dtype=bool))
        noise = rng.normal(0.0, MOTION_SIGMA[sev], (n, 3)) * np.array([1.0, 0.3, 0.1])
        out.points = pts + noise
        return out
    if spec.kind == "beam_missing":
        beams = np.unique(scene.beam[scene.beam >= 0])
        drop = rng.choice(beams, size=int(round(BEAM_DROP[sev] * len(beams))), replace=False)
        return _keep(scene, ~np.isin(scene.beam, drop))
    if spec.kind == "crosstalk":
        m = int(CROSSTALK_FRAC[sev] * n)
        src = pts[rng.integers(0, n, m)] if n else np.zeros((0, 3))
        scale = rng.uniform(0.3, 1.0, (m, 1))
        ghosts = src * scale + rng.normal(0.0, 0.3, (m, 3))
        ghosts[:, 2] = np.abs(ghosts[:, 2])
        return _add(scene, ghosts, NOISE)
    if spec.kind == "incomplete_echo":
        p = np.where(scene.kinds == OBJECT, ECHO_DROP[sev], 0.05)
        return _keep(scene, rng.random(n) >= p)
    if spec.kind == "cross_sensor":
        beams = np.unique(scene.beam[scene.beam >= 0])
        step = 1.0 / SENSOR_KEEP[sev]
        kept = beams[np.unique(np.floor(np.arange(0, len(beams), step)).astype(int))]
        out = _keep(scene, np.isin(scene.beam, kept) & (rng.random(n) >= 0.1))
        return out
    raise ConfigError(f"unknown corruption kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# streams


def generate_batch(cfg, seed, t):
    rng = np.random.default_rng([seed, t])
    spec = cfg.corruption_at(t)
    scenes = []
    for _ in range(cfg.batch_size):
        scene = make_scene(rng, cfg)
        scene = apply_corruption(scene, spec, rng, cfg.sensor_height)
        if len(scene.points) == 0:
            scene = _add(scene, np.array([[cfg.x_range[0] + 1.0, 0.0, 0.0]]), GROUND)
        scenes.append(scene)
    return SceneBatch(t, scenes, spec)


def generate_stream(cfg, seed):
    """Reproducible list of SceneBatch for ``cfg`` and ``seed``."""
    if not isinstance(cfg, StreamConfig):
        cfg = StreamConfig.from_dict(cfg)
    cfg.validate()
    return [generate_batch(cfg, seed, t) for t in range(cfg.num_batches)]


# ---------------------------------------------------------------------------
# scene file format: b"MOSS", u32 batch count, then per batch a length-prefixed
# JSON header followed by the float32/int32 arrays it describes


def dump_stream(batches, fh=None):
    buf = io.BytesIO() if fh is None else fh
    buf.write(b"MOSS")
    buf.write(struct.pack("<I", len(batches)))
    for b in batches:
        header = {"t": b.batch_index, "kind": b.corruption.kind,
                  "severity": b.corruption.severity,
                  "scenes": [[len(s.points), len(s.gt_boxes)] for s in b.scenes]}
        raw = json.dumps(header, sort_keys=True).encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        for s in b.scenes:
            buf.write(s.points.astype("<f4").tobytes())
            buf.write(s.kinds.astype("<i4").tobytes())
            buf.write(s.beam.astype("<i4").tobytes())
            buf.write(s.gt_boxes.boxes.astype("<f4").tobytes())
            buf.write(s.gt_boxes.labels.astype("<i4").tobytes())
    if fh is None:
        return buf.getvalue()
    return None


def load_stream(data):
    """Inverse of ``dump_stream`` (coordinates come back as float32 precision)."""
    if data[:4] != b"MOSS":
        raise ConfigError("not a scene stream file")
    (count,) = struct.unpack_from("<I", data, 4)
    pos = 8
    batches = []

    def take(dtype, n, width=1):
        nonlocal pos
        arr = np.frombuffer(data, dtype=dtype, count=n * width, offset=pos)
        pos += arr.nbytes
        return arr.reshape(n, width) if width > 1 else arr

    for _ in range(count):
        (hl,) = struct.unpack_from("<I", data, pos)
        pos += 4
        header = json.loads(data[pos:pos + hl])
        pos += hl
        scenes = []
        for npts, nbox in header["scenes"]:
            pts = take("<f4", npts, 3).astype(np.float64)
            kinds = take("<i4", npts).astype(np.int64)
            beam = take("<i4", npts).astype(np.int64)
            boxes = take("<f4", nbox, 7).astype(np.float64)
            labels = take("<i4", nbox).astype(np.int64)
            scenes.append(Scene(pts, BoxSet(boxes, labels, np.ones(nbox)), kinds, beam))
        batches.append(SceneBatch(header["t"], scenes,
                                  CorruptionSpec(header["kind"], header["severity"])))
    return batches


def with_domain(cfg, domain, **overrides):
    return replace(cfg, domain=domain, **overrides)
