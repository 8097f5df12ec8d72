"""Online test-time adaptation loop, baselines and early-set replay."""

import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import detector as det
from . import fileio
from .bank import ModelBank
from .config import RunConfig, source_key
from .errors import TrainingDiverged
from .evaluation import APAccumulator, evaluate
from .params import ParamVector
from .simstream import generate_stream
from .synergy import (SimilarityConfig, assemble, gram_matrix, synergy_weights,
                      uniform_weights)

logger = logging.getLogger(__name__)


def default_cache_dir():
    return os.environ.get("SYNERGY_TTA_CACHE",
                          os.path.join(os.path.expanduser("~"), ".cache", "synergy_tta"))


def source_scenes(cfg):
    src = replace(cfg.stream, domain="source", num_batches=cfg.source.batches,
                  schedule=(("none", "moderate", 1),))
    stream = generate_stream(src, cfg.source.seed)
    return [(s.points, s.gt_boxes) for b in stream for s in b.scenes]


def source_model(cfg, cache_dir=None):
    """Pretrained source parameters, loaded from cache or trained and cached."""
    if cfg.source.checkpoint:
        return fileio.load_checkpoint(cfg.source.checkpoint)
    cache_dir = cache_dir or default_cache_dir()
    path = os.path.join(cache_dir, f"source_{source_key(cfg)}.mosc")
    if os.path.exists(path):
        return fileio.load_checkpoint(path)
    logger.info("pretraining source model (%d steps)", cfg.source.steps)
    params = det.pretrain(cfg.detector, source_scenes(cfg), steps=cfg.source.steps,
                          batch_size=cfg.source.batch_size, seed=cfg.source.seed,
                          lr=cfg.source.lr)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = f"{path}.{os.getpid()}.tmp"
    fileio.save_checkpoint(tmp, params)
    os.replace(tmp, path)
    return params


@dataclass
class RunResult:
    config: RunConfig
    records: list
    summary: dict
    final_params: ParamVector
    bank: Optional[ModelBank]
    warmup_params: Optional[ParamVector]
    stream: list = field(repr=False, default_factory=list)

    @property
    def final_ap(self):
        return self.summary["ap"]

    @property
    def evictions(self):
        return [r["evicted_id"] for r in self.records if r["evicted_id"] is not None]


def _similarity_config(cfg):
    return SimilarityConfig(feat_mode=cfg.featsim, rank_method=cfg.rank_method,
                            rank_rel_tol=cfg.rank_rel_tol,
                            center_features=cfg.center_features,
                            box_cost_mean=cfg.box_cost_mean)


def bank_weights(bank, x, cfg, uniform=False):
    """Synergy weights of the bank on encoded batch ``x`` (and the Gram matrix)."""
    if uniform:
        return uniform_weights(len(bank)), None
    outputs = [det.infer_encoded(p, x, cfg.detector) for p in bank.iter_params()]
    g = gram_matrix(outputs, _similarity_config(cfg), cfg.workers)
    return synergy_weights(g), g


def run_tta(cfg, source_params=None, stream=None, out_dir=None, cache_dir=None):
    """Run one adaptation pass over the target stream.

    Phase 1 self-trains the current model on the first K batches and stores
    each result in the bank. Afterwards every batch is pseudo-labelled by the
    weighted bank average (the labeller) and the current model takes one
    gradient step; every L batches the bank swaps its lowest-weighted
    checkpoint for the current model. Baseline modes change the labeller:
    ``mean_ensemble`` uses uniform weights, ``no_ensemble`` the current model
    itself, ``no_adapt`` never trains. ``mos_latest_first`` always evicts the
    oldest checkpoint.

    The reported predictions for each batch are the labeller's, made before
    that batch's training step.
    """
    cfg.validate()
    dcfg = cfg.detector
    tcfg = replace(dcfg, learning_rate=cfg.tta_lr, grad_clip=cfg.tta_grad_clip,
                   reg_weight=cfg.tta_reg_weight)
    f0 = source_params if source_params is not None else source_model(cfg, cache_dir)
    det.check_layout(f0, dcfg)
    if stream is None:
        stream = generate_stream(cfg.stream, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 7919])

    tmp = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        store = os.path.join(out_dir, "checkpoints")
    else:
        tmp = tempfile.TemporaryDirectory(prefix="synergy_tta_")
        store = tmp.name
    metrics_path = os.path.join(out_dir, "metrics.jsonl") if out_dir else None

    ensemble = cfg.mode in ("mos_sw_first", "mos_latest_first", "mean_ensemble")
    policy = "oldest" if cfg.mode in ("mos_latest_first", "mean_ensemble") else "synergy"
    bank = ModelBank(cfg.bank_size, cfg.update_period, store) if ensemble else None
    params = f0
    warmup_params = None
    acc = APAccumulator(dcfg.num_classes, cfg.iou_thresh)
    records = []

    with fileio.MetricsWriter(metrics_path) as writer:
        for batch in stream:
            t = batch.batch_index
            x = det.encode(batch.inputs, dcfg)
            weights = None
            evicted = None
            phase = "static"
            if cfg.mode == "no_adapt":
                preds = [b for _, b in det.infer_encoded(f0, x, dcfg)]
            elif ensemble and bank.warmed_up:
                phase = "synergy"
                w, _ = bank_weights(bank, x, cfg, uniform=cfg.mode == "mean_ensemble")
                labeller = assemble(bank.iter_params(), w)
                preds = [b for _, b in det.infer_encoded(labeller, x, dcfg)]
                weights = w
            else:
                phase = "warmup" if ensemble else "self"
                preds = [b for _, b in det.infer_encoded(params, x, dcfg)]

            diverged = False
            n_labels = 0
            if cfg.mode != "no_adapt":
                labels = det.pseudo_label(preds, cfg.pseudo_threshold, dcfg.pseudo_nms_iou)
                n_labels = sum(len(b) for b in labels)
                ignore = None
                if cfg.ignore_threshold > 0.0:
                    ignore = det.uncertain_boxes(preds, cfg.ignore_threshold, cfg.pseudo_threshold)
                try:
                    params = det.train_step(params, batch.inputs, labels, tcfg, rng,
                                            ignore=ignore)
                except TrainingDiverged as exc:
                    diverged = True
                    logger.warning("batch %d: training step skipped (%s)", t, exc)
                if ensemble:
                    if phase == "warmup":
                        bank.push_warmup(params, t)
                        if bank.warmed_up:
                            warmup_params = params.copy()
                    else:
                        bank.record_weights(weights)
                        if bank.update_due:
                            evicted = bank.update(params, t, policy)

            acc.add(preds, batch.ground_truth)
            running = acc.summary()
            batch_eval = evaluate(preds, batch.ground_truth, cfg.iou_thresh, dcfg.num_classes)
            record = {
                "batch": t,
                "mode": cfg.mode,
                "phase": phase,
                "corruption": f"{batch.corruption.kind}/{batch.corruption.severity}",
                "batch_ap": round(batch_eval["ap"], 10),
                "running_ap": round(running["ap"], 10),
                "per_class": [{k: (round(v, 10) if isinstance(v, float) else v)
                               for k, v in c.items()} for c in running["per_class"]],
                "weights": None if weights is None else [round(float(v), 12) for v in weights.weights],
                "raw_weights": None if weights is None else [round(float(v), 12) for v in weights.raw],
                "bank_ids": bank.ids if bank else None,
                "evicted_id": evicted,
                "pseudo_labels": n_labels,
                "diverged": diverged,
            }
            records.append(record)
            writer.write(record)

    summary = acc.summary()
    summary.update(mode=cfg.mode, batches=len(stream),
                   evictions=sum(r["evicted_id"] is not None for r in records),
                   diverged_steps=sum(r["diverged"] for r in records))
    if out_dir:
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            fh.write(fileio.dumps_record(summary) + "\n")
        fileio.write_plot_csv(os.path.join(out_dir, "plot.csv"), records)
        fileio.save_checkpoint(os.path.join(out_dir, "final.mosc"), params)

    if bank is not None and tmp is not None:
        # keep the final bank usable after the temporary store goes away
        for ckpt in bank.checkpoints:
            ckpt._params = ckpt.params
            ckpt.path = None
        bank.store_dir = None
    if tmp is not None:
        tmp.cleanup()
    return RunResult(cfg, records, summary, params, bank, warmup_params, stream)


def replay_early_set(result, early_batches=None):
    """Evaluate the final bank and the warm-up checkpoint on the early batches.

    The final bank is combined per batch with its synergy weights (uniform
    weights for the mean-ensemble baseline). Returns both metric dicts.
    """
    cfg = result.config
    dcfg = cfg.detector
    if early_batches is None:
        early_batches = result.stream[:cfg.early_set_batches]
    if result.bank is None or result.warmup_params is None:
        raise ValueError("replay needs a completed ensemble run with a filled bank")
    bank_acc = APAccumulator(dcfg.num_classes, 0.5)
    bank_acc7 = APAccumulator(dcfg.num_classes, cfg.iou_thresh)
    warm_acc = APAccumulator(dcfg.num_classes, 0.5)
    warm_acc7 = APAccumulator(dcfg.num_classes, cfg.iou_thresh)
    for batch in early_batches:
        x = det.encode(batch.inputs, dcfg)
        w, _ = bank_weights(result.bank, x, cfg, uniform=cfg.mode == "mean_ensemble")
        merged = assemble(result.bank.iter_params(), w)
        preds = [b for _, b in det.infer_encoded(merged, x, dcfg)]
        warm = [b for _, b in det.infer_encoded(result.warmup_params, x, dcfg)]
        for a, p in ((bank_acc, preds), (bank_acc7, preds), (warm_acc, warm), (warm_acc7, warm)):
            a.add(p, batch.ground_truth)

    def pack(a5, a7):
        s5, s7 = a5.summary(), a7.summary()
        return {"ap": s7["ap"], "ap_at_0.5": s5["ap"],
                "recall": s7["per_class"][0]["recall"],
                "recall_at_0.5": s5["per_class"][0]["recall"]}

    return {"final_bank": pack(bank_acc, bank_acc7),
            "warmup_checkpoint": pack(warm_acc, warm_acc7),
            "batches": len(early_batches)}
