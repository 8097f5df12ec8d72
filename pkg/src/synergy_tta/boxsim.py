"""Oriented 3D boxes, rotated IoU, Hungarian matching and box-set similarity.

Boxes are stored as rows ``[x, y, z, length, width, height, yaw]`` with the
center at the geometric middle of the box and yaw measured around +z from
the +x axis.
"""

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import InvalidBox, InvalidCostMatrix

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    w = np.where(w <= -math.pi, w + TWO_PI, w)
    return float(w) if np.ndim(w) == 0 else w


def angle_distance(a, b):
    """Absolute wrapped difference ``|wrap(a - b)|``, exactly symmetric in (a, b)."""
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


@dataclass(frozen=True)
class Box3D:
    center: tuple
    size: tuple
    yaw: float = 0.0
    class_id: Optional[int] = 0
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        if self.class_id is None:
            if any(s != 0.0 for s in self.size):
                raise InvalidBox("a padding box must have zero size")
        elif min(self.size) <= 0.0:
            raise InvalidBox(f"box size must be positive, got {self.size}")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidBox(f"score {self.score} outside [0, 1]")

    @property
    def is_pad(self):
        return self.class_id is None

    def as_array(self):
        return np.array([*self.center, *self.size, self.yaw])

    @classmethod
    def pad(cls):
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0, None, 0.0)


@dataclass
class BoxSet:
    """An ordered set of boxes held as parallel arrays.

    ``boxes`` is (N, 7), ``labels`` holds integer class ids and ``scores``
    detection confidences in [0, 1].
    """

    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 7)))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 7)
        n = len(self.boxes)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.labels) != n or len(self.scores) != n:
            raise ValueError("boxes, labels and scores must have equal length")
        if n:
            if np.any(self.boxes[:, 3:6] <= 0.0):
                raise InvalidBox("box sizes must be positive")
            self.boxes[:, 6] = wrap_angle(self.boxes[:, 6])

    def __len__(self):
        return len(self.boxes)

    def __iter__(self) -> Iterator[Box3D]:
        for row, label, score in zip(self.boxes, self.labels, self.scores):
            yield Box3D(row[:3], row[3:6], row[6], int(label), float(score))

    def __getitem__(self, idx):
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return BoxSet(self.boxes[idx], self.labels[idx], self.scores[idx])

    @classmethod
    def from_boxes(cls, boxes):
        boxes = list(boxes)
        if any(b.is_pad for b in boxes):
            raise InvalidBox("padding boxes are not allowed in a BoxSet")
        if not boxes:
            return cls()
        return cls(
            np.array([b.as_array() for b in boxes]),
            np.array([b.class_id for b in boxes]),
            np.array([b.score for b in boxes]),
        )

    def of_class(self, class_id):
        return self[self.labels == class_id]

    def sorted_by_score(self):
        return self[np.argsort(-self.scores, kind="stable")]

    def scaled(self, s):
        boxes = self.boxes.copy()
        boxes[:, :6] *= s
        return BoxSet(boxes, self.labels.copy(), self.scores.copy())


# ---------------------------------------------------------------------------
# geometry


def bev_corners(box):
    """Counter-clockwise BEV corners of a ``[x, y, z, l, w, h, yaw]`` row."""
    x, y, _, l, w, _, yaw = box
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = l / 2.0, w / 2.0
    out = []
    for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((x + c * dx - s * dy, y + s * dx + c * dy))
    return out


def _clip(subject, clipper):
    # Sutherland-Hodgman; both polygons convex and counter-clockwise
    output = subject
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % m]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0.0:
                output.append((px, py))
                if sq < 0.0:
                    t = sp / (sp - sq)
                    output.append((px + t * (qx - px), py + t * (qy - py)))
            elif sq >= 0.0:
                t = sp / (sp - sq)
                output.append((px + t * (qx - px), py + t * (qy - py)))
    return output


def polygon_area(poly):
    """Shoelace area of a simple polygon (positive for counter-clockwise)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def _check_row(box):
    if box[3] <= 0.0 or box[4] <= 0.0 or box[5] <= 0.0:
        raise InvalidBox(f"degenerate box size {tuple(box[3:6])}")


def _iou_rows(a, b):
    if tuple(a) == tuple(b):
        return 1.0
    # canonical argument order keeps the float result exactly symmetric
    if tuple(b) < tuple(a):
        a, b = b, a
    za0, za1 = a[2] - a[5] / 2.0, a[2] + a[5] / 2.0
    zb0, zb1 = b[2] - b[5] / 2.0, b[2] + b[5] / 2.0
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    ra = 0.5 * math.hypot(a[3], a[4])
    rb = 0.5 * math.hypot(b[3], b[4])
    if math.hypot(a[0] - b[0], a[1] - b[1]) >= ra + rb:
        return 0.0
    inter = abs(polygon_area(_clip(bev_corners(a), bev_corners(b)))) * dz
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def box_iou(a, b):
    """3D IoU of two oriented boxes (``Box3D`` or 7-vectors).

    The overlap is the clipped BEV rectangle area times the vertical overlap.
    """
    if isinstance(a, Box3D):
        if a.is_pad:
            raise InvalidBox("IoU is undefined for a padding box")
        a = a.as_array()
    if isinstance(b, Box3D):
        if b.is_pad:
            raise InvalidBox("IoU is undefined for a padding box")
        b = b.as_array()
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    _check_row(a)
    _check_row(b)
    return _iou_rows(a, b)


def pairwise_iou(a, b):
    """(len(a), len(b)) IoU matrix between two (N, 7) box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 7)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 7)
    out = np.zeros((len(a), len(b)))
    if not len(a) or not len(b):
        return out
    ra = 0.5 * np.hypot(a[:, 3], a[:, 4])
    rb = 0.5 * np.hypot(b[:, 3], b[:, 4])
    dist = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    za = np.stack([a[:, 2] - a[:, 5] / 2, a[:, 2] + a[:, 5] / 2], 1)
    zb = np.stack([b[:, 2] - b[:, 5] / 2, b[:, 2] + b[:, 5] / 2], 1)
    dz = np.minimum(za[:, None, 1], zb[None, :, 1]) - np.maximum(za[:, None, 0], zb[None, :, 0])
    cand = (dist < ra[:, None] + rb[None, :]) & (dz > 0)
    al, bl = a.tolist(), b.tolist()
    for i, j in zip(*np.nonzero(cand)):
        out[i, j] = _iou_rows(al[i], bl[j])
    return out


def box_pair_cost(a, b):
    """Matching cost ``(1 - IoU) + L1(center) + L1(size) + |wrapped yaw diff|``."""
    iou = box_iou(a, b)
    a = a.as_array() if isinstance(a, Box3D) else np.asarray(a, dtype=np.float64)
    b = b.as_array() if isinstance(b, Box3D) else np.asarray(b, dtype=np.float64)
    return (
        (1.0 - iou)
        + float(np.sum(np.abs(a[:6] - b[:6])))
        + angle_distance(float(a[6]), float(b[6]))
    )


def pairwise_cost(a, b):
    """Matrix of ``box_pair_cost`` between the rows of two box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 7)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 7)
    iou = pairwise_iou(a, b)
    l1 = np.sum(np.abs(a[:, None, :6] - b[None, :, :6]), axis=2)
    d = np.mod(np.abs(a[:, None, 6] - b[None, :, 6]), TWO_PI)
    yaw = np.minimum(d, TWO_PI - d)
    return (1.0 - iou) + l1 + yaw


# ---------------------------------------------------------------------------
# assignment


@dataclass(frozen=True)
class Assignment:
    """Row ``n`` is assigned to column ``permutation[n]``."""

    permutation: tuple
    total_cost: float


def hungarian_match(cost):
    """Minimum-cost perfect matching on a square cost matrix.

    Shortest augmenting path with row/column potentials, O(N^3).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidCostMatrix(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidCostMatrix("cost matrix has non-finite entries")
    n = c.shape[0]
    if n == 0:
        return Assignment((), 0.0)

    inf = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=np.int64)  # row_of[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used[1:]
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1

    perm = [0] * n
    for j in range(1, n + 1):
        perm[row_of[j] - 1] = j - 1
    total = math.fsum(c[i, perm[i]] for i in range(n))
    return Assignment(tuple(perm), total)


# ---------------------------------------------------------------------------
# set similarity


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def matched_box_cost(a, b, unmatched_cost=1.0):
    """Total Hungarian box cost between two sets and the number of real pairs.

    The smaller set is padded with empty slots whose cost is zero and which
    do not count toward the total. When exactly one set is empty every real
    box is charged ``unmatched_cost`` instead.
    """
    na, nb = len(a), len(b)
    if na == 0 and nb == 0:
        return 0.0, 0
    if na == 0 or nb == 0:
        return (na + nb) * unmatched_cost, 0
    n = max(na, nb)
    cost = np.zeros((n, n))
    real = pairwise_cost(a.boxes, b.boxes)
    cost[:na, :nb] = real
    match = hungarian_match(cost)
    pairs = [real[i, j] for i, j in enumerate(match.permutation) if i < na and j < nb]
    # sorted fsum makes the total independent of argument order
    return math.fsum(sorted(pairs)), len(pairs)


def s_box(a, b, mean_cost=False, unmatched_cost=1.0):
    """Output-level similarity of two box sets, in (0, 1].

    Returns 1 for zero matched cost, otherwise ``sigmoid(1 / T)`` where ``T``
    is the total (or, with ``mean_cost``, per-pair mean) matched cost.
    """
    total, pairs = matched_box_cost(a, b, unmatched_cost)
    if total == 0.0:
        return 1.0
    if mean_cost:
        count = pairs if pairs else len(a) + len(b)
        total = total / count
    return sigmoid(1.0 / total)


def s_box_classwise(a, b, class_ids=None, mean_cost=False):
    """Mean of per-class ``s_box`` over the classes present in either set."""
    if class_ids is None:
        class_ids = sorted(set(a.labels.tolist()) | set(b.labels.tolist()))
    if not len(class_ids):
        return 1.0
    vals = [s_box(a.of_class(c), b.of_class(c), mean_cost) for c in class_ids]
    return math.fsum(vals) / len(vals)


def nms(boxes, iou_threshold):
    """Greedy non-maximum suppression; returns kept indices in score order."""
    order = np.argsort(-boxes.scores, kind="stable")
    if len(order) == 0:
        return order
    iou = pairwise_iou(boxes.boxes[order], boxes.boxes[order])
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for i in range(len(order)):
        if suppressed[i]:
            continue
        keep.append(order[i])
        suppressed |= iou[i] > iou_threshold
    return np.array(keep, dtype=np.int64)
