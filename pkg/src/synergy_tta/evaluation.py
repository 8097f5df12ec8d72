"""Average precision over 40 recall positions."""

import numpy as np

from .boxsim import pairwise_iou

RECALL_POSITIONS = np.linspace(1.0 / 40, 1.0, 40)


def match_scene(pred, gt, iou_thresh):
    """Greedy one-to-one matching of score-sorted predictions to ground truth.

    Returns a boolean true-positive flag per prediction (in ``pred`` order).
    """
    tp = np.zeros(len(pred), dtype=bool)
    if not len(pred) or not len(gt):
        return tp
    iou = pairwise_iou(pred.boxes, gt.boxes)
    taken = np.zeros(len(gt), dtype=bool)
    for i in np.argsort(-pred.scores, kind="stable"):
        cand = np.where(taken, -1.0, iou[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_thresh:
            taken[j] = True
            tp[i] = True
    return tp


def ap_from_matches(scores, tp, num_gt):
    """Interpolated AP at 40 recall positions, plus final precision and recall."""
    if num_gt == 0:
        return 0.0, 0.0, 0.0
    if len(scores) == 0:
        return 0.0, 0.0, 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    hits = np.asarray(tp, dtype=np.float64)[order]
    ctp = np.cumsum(hits)
    precision = ctp / np.arange(1, len(hits) + 1)
    recall = ctp / num_gt
    # running max from the right: best precision at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POSITIONS, side="left")
    interp = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(interp.mean()), float(precision[-1]), float(recall[-1])


class APAccumulator:
    """Collects per-scene matches so AP can be reported cumulatively."""

    def __init__(self, num_classes=1, iou_thresh=0.7):
        self.num_classes = num_classes
        self.iou_thresh = iou_thresh
        self.scores = [[] for _ in range(num_classes)]
        self.tp = [[] for _ in range(num_classes)]
        self.num_gt = [0] * num_classes

    def add(self, preds, gts):
        for pred, gt in zip(preds, gts):
            for c in range(self.num_classes):
                p, g = pred.of_class(c), gt.of_class(c)
                self.scores[c].extend(p.scores.tolist())
                self.tp[c].extend(match_scene(p, g, self.iou_thresh).tolist())
                self.num_gt[c] += len(g)

    def summary(self):
        per_class = []
        for c in range(self.num_classes):
            ap, prec, rec = ap_from_matches(self.scores[c], self.tp[c], self.num_gt[c])
            per_class.append({"class": c, "ap": ap, "precision": prec, "recall": rec,
                              "num_gt": self.num_gt[c]})
        present = [r["ap"] for r in per_class if r["num_gt"]]
        return {"ap": float(np.mean(present)) if present else 0.0, "per_class": per_class}


def evaluate(preds, gts, iou_thresh=0.7, num_classes=1):
    """AP / precision / recall of per-scene predictions against ground truth."""
    acc = APAccumulator(num_classes, iou_thresh)
    acc.add(preds, gts)
    return acc.summary()
