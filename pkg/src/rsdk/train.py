"""Training loop, batched inference and train-set evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from .config import RunConfig
from .data import augment
from .errors import NumericalError, ParameterError
from .evaluator import map_report
from .head import normalize_box
from .matcher import hungarian_loss, match
from .model import Detector, detections
from .optim import Adam
from .tensor import no_grad
from .transformer import EVAL, Ctx

log = logging.getLogger(__name__)


def targets_of(frame) -> np.ndarray:
    w, h = frame.size
    return np.array([normalize_box(b, w, h) for b in frame.boxes]).reshape(-1, 5)


def batch_loss(model, images, targets, ctx=EVAL, frozen=None):
    """Hungarian loss summed over a batch and divided by its object count (at least 1).

    ``frozen`` is a list of per-image ``(eta, alpha)`` pairs; when given, the
    assignment and CIoU weight are held fixed instead of recomputed. Returns
    ``(loss, parts, frozen)``.
    """
    pred = model(np.asarray(images), ctx)
    total, parts, out = None, {"nll": 0.0, "ciou": 0.0, "l1": 0.0}, []
    for b, gt in enumerate(targets):
        lp, bx = pred.log_probs[b], pred.boxes[b]
        if frozen is None:
            eta, _ = match(gt, lp, bx)
            alpha = None
        else:
            eta, alpha = frozen[b]
        loss, p = hungarian_loss(gt, lp, bx, eta, alpha=alpha)
        out.append((eta, p["alpha"]))
        total = loss if total is None else total + loss
        for key in parts:
            parts[key] += p[key]
    norm = max(sum(len(t) for t in targets), 1)
    parts = {key: v / norm for key, v in parts.items()}
    return total * (1.0 / norm), parts, out


@dataclass
class History:
    epochs: list = field(default_factory=list)     # dicts per epoch

    def losses(self):
        return [e["loss"] for e in self.epochs]


def format_epoch(rec) -> str:
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items())


def _dump_failure(path, epoch, step, names, exc):
    if path is None:
        return
    with open(path, "w") as fh:
        fh.write(f"epoch={epoch} step={step}\nframes={','.join(names)}\nerror={exc}\n")


def train(cfg: RunConfig, frames, log_path=None, epochs=None, on_epoch=None):
    """Fit a fresh detector to ``frames``; returns ``(model, history)``.

    Two Adam groups: the backbone branches with fusion, and everything
    else. Both rates drop by ``cfg.lr_drop_factor`` from ``cfg.lr_drop_epoch``.
    """
    if not frames:
        raise ParameterError("training set is empty")
    most = max(len(f.boxes) for f in frames)
    if most > cfg.num_queries:
        raise ParameterError(f"a frame holds {most} objects but the model has {cfg.num_queries} queries")
    model = Detector(cfg.model, seed=cfg.seed)
    groups = model.param_groups()
    opt = Adam({"backbone": (groups["backbone"], cfg.lr_backbone),
                "transformer": (groups["transformer"], cfg.lr_transformer)})
    history = History()
    logf = open(log_path, "w") if log_path else None
    step = 0
    try:
        for epoch in range(1, (epochs or cfg.epochs) + 1):
            lr_b, lr_t = cfg.lr_at(epoch)
            opt.set_lr("backbone", lr_b)
            opt.set_lr("transformer", lr_t)
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(len(frames))
            sums = {"loss": 0.0, "nll": 0.0, "ciou": 0.0, "l1": 0.0}
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [frames[i] for i in order[start:start + cfg.batch_size]]
                if cfg.augment:
                    batch = [augment(f, cfg.augment, rng) for f in batch]
                step += 1
                try:
                    opt.zero_grad()
                    loss, parts, _ = batch_loss(model, [f.image for f in batch],
                                                [targets_of(f) for f in batch],
                                                Ctx(True, cfg.seed, step))
                    loss.backward()
                except NumericalError as exc:
                    _dump_failure(f"{log_path}.failure" if log_path else None, epoch, step,
                                  [f.name for f in batch], exc)
                    raise NumericalError(f"non-finite value at epoch {epoch}, step {step} "
                                         f"(frames {[f.name for f in batch]}): {exc}") from exc
                opt.step()
                sums["loss"] += loss.item()
                for key in ("nll", "ciou", "l1"):
                    sums[key] += parts[key]
                n_batches += 1
            rec = {"epoch": epoch, "lr_backbone": lr_b, "lr_transformer": lr_t}
            rec.update({key: v / n_batches for key, v in sums.items()})
            history.epochs.append(rec)
            if logf:
                logf.write(format_epoch(rec) + "\n")
                logf.flush()
            log.debug(format_epoch(rec))
            if on_epoch:
                on_epoch(model, rec)
    finally:
        if logf:
            logf.close()
    return model, history


def predict(model, frames, batch_size=8):
    """Eval-mode (dropout off) detections per frame name."""
    out = {}
    with no_grad():
        for start in range(0, len(frames), batch_size):
            chunk = frames[start:start + batch_size]
            pred = model(np.asarray([f.image for f in chunk]), EVAL)
            for b, f in enumerate(chunk):
                w, h = f.size
                out[f.name] = detections(pred, w, h, b)
    return out


def evaluate(model, frames, score_floor=0.05):
    dets = predict(model, frames)
    gts = {f.name: [b.astuple() for b in f.boxes] for f in frames}
    return map_report(dets, gts, score_floor=score_floor), dets
