"""Joint training: mixed batches, the weighted CE + masked-BCE loss, LR schedule,
checkpoints and evaluation."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .dataio import AugmentPolicy, MixedBatchSampler, augment, bce_mask_loss
from .errors import ConfigError, EmptyBatch, InvariantViolation, NoLabels, ShapeMismatch
from .expbranch import ce_loss
from .model import AUViT, ModelConfig
from .tensor import SGD, Adam, Tensor, concatenate, load_archive, no_grad, save_archive

OPTIMIZERS = ("adam", "sgd")
LOSSES = ("ce", "bce")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    optimizer: str = "adam"
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 64
    warmup_epochs: int = 10
    cosine_epochs: int = 10
    epochs: int = 20
    ratio: tuple = (4, 1)
    seed: int = 0
    steps_per_epoch: Optional[int] = None
    oversample_balanced: bool = False
    # route target samples through the AU head too (pseudo-AU labels on the target)
    target_au: bool = False
    # loss terms that get a forward pass; dropping one gives the single-task run
    losses: tuple = LOSSES
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    check_routing: bool = False
    au_f1: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ratio", tuple(self.ratio))
        object.__setattr__(self, "losses", tuple(self.losses))
        if isinstance(self.augment, dict):
            policy = dict(self.augment)
            if "blur_sigma" in policy:
                policy["blur_sigma"] = tuple(policy["blur_sigma"])
            unknown = sorted(set(policy) - {f.name for f in fields(AugmentPolicy)})
            if unknown:
                raise ConfigError(f"unknown augmentation keys {unknown}", f"train.augment.{unknown[0]}")
            object.__setattr__(self, "augment", AugmentPolicy(**policy))
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative", "alpha" if self.alpha < 0 else "beta")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1", "epochs")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}", "optimizer")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative", "lr")
        if self.warmup_epochs < 0 or self.cosine_epochs < 0:
            raise ConfigError("schedule lengths must be non-negative", "warmup_epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", "batch_size")
        if len(self.ratio) != 2 or min(self.ratio) <= 0:
            raise ConfigError("ratio must be two positive integers", "ratio")
        if not set(self.losses) <= set(LOSSES) or not self.losses:
            raise ConfigError(f"losses must be a non-empty subset of {LOSSES}", "losses")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["blur_sigma"] = list(self.augment.blur_sigma)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown train keys {unknown}", f"train.{unknown[0]}")
        return cls(**d)


@dataclass
class EpochReport:
    epoch: int
    train_loss: dict  # {"total", "ce", "bce"} averaged over steps
    target_accuracy: Optional[float]
    lr_used: float
    au_f1_macro: Optional[float] = None

    def to_dict(self) -> dict:
        return {"type": "epoch", **asdict(self)}


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows = true class, cols = predicted
    predictions: np.ndarray

    def to_dict(self, classes=None) -> dict:
        out = {"accuracy": self.accuracy, "confusion": self.confusion.tolist(), "total": int(self.confusion.sum())}
        if classes is not None:
            out["classes"] = list(classes)
        return out


@dataclass
class TrainResult:
    model: AUViT
    reports: list
    best_accuracy: Optional[float]
    steps: list = field(default_factory=list)


# -- loss -------------------------------------------------------------------

def loss_terms(z_fer, y_fer, z_au, y_au, au_mask) -> tuple:
    """``(ce, bce)``; a term is ``None`` when its sub-batch is absent."""
    ce = bce = None
    if z_fer is not None and z_fer.shape[0] > 0:
        ce = ce_loss(z_fer, y_fer)
    if z_au is not None and z_au.shape[0] > 0:
        bce = bce_mask_loss(z_au, y_au, au_mask)
    return ce, bce


def combine(ce, bce, alpha: float, beta: float) -> Tensor:
    if ce is None and bce is None:
        raise EmptyBatch("both the target and the auxiliary sub-batch are empty")
    if ce is None:
        return bce * beta
    if bce is None:
        return ce * alpha
    return ce * alpha + bce * beta


def joint_loss(z_fer, y_fer, z_au, y_au, au_mask, alpha: float = 1.0, beta: float = 1.0) -> Tensor:
    """``alpha * CE(target rows) + beta * masked BCE(aux rows)``; absent terms count 0."""
    return combine(*loss_terms(z_fer, y_fer, z_au, y_au, au_mask), alpha, beta)


# -- schedule ----------------------------------------------------------------

def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Per-step linear warmup to ``lr`` (reached at the last warmup step), then
    cosine decay to 0 at the last decay step; 0 afterwards."""
    warm = cfg.warmup_epochs * steps_per_epoch
    decay = cfg.cosine_epochs * steps_per_epoch
    if step < warm:
        return cfg.lr * (step + 1) / warm
    if decay == 0:
        return cfg.lr
    t = (step - (warm - 1)) / decay if warm else step / decay
    if t >= 1.0:
        return 0.0
    return max(0.0, cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t)))


# -- batching ----------------------------------------------------------------

def stack_inputs(records, rng=None, policy: Optional[AugmentPolicy] = None) -> np.ndarray:
    arrays = []
    for rec in records:
        if rng is not None and policy is not None and policy.enabled and rec.image is not None:
            rec = augment(rec, rng, policy)
        arrays.append(rec.pixels)
    return np.stack(arrays)


def _check_vocab(manifest, model: AUViT) -> None:
    if manifest is not None and tuple(manifest.vocab.entries) != tuple(model.vocab.entries):
        raise ShapeMismatch(f"{manifest.name}: AU vocabulary differs from the model's")


def _au_arrays(records) -> tuple:
    return np.stack([r.au_vector for r in records]), np.stack([r.au_mask for r in records])


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.lr, weight_decay=cfg.weight_decay)
    return Adam(params, cfg.lr, weight_decay=cfg.weight_decay)


class _GradSnapshot:
    def __init__(self, model: AUViT, names):
        params = dict(model.named_parameters())
        self.params = {n: params[n] for n in names}
        self.saved = {n: None if p.grad is None else p.grad.copy() for n, p in self.params.items()}

    def unchanged(self) -> bool:
        for n, p in self.params.items():
            before = self.saved[n]
            if (before is None) != (p.grad is None):
                return False
            if before is not None and not np.array_equal(before, p.grad):
                return False
        return True


def train_step(model: AUViT, batch, cfg: TrainConfig, rngs: tuple, groups: dict) -> dict:
    """Forward/backward for one mixed batch; gradients are left on the parameters."""
    t_rng, a_rng = rngs
    ce = bce = None
    target_au = None
    if batch.target_samples and "ce" in cfg.losses:
        x = stack_inputs(batch.target_samples, t_rng, cfg.augment)
        seq = model.tap(x)
        z_fer = model.exp_from_tap(seq)
        ce = ce_loss(z_fer, [r.expr_label for r in batch.target_samples])
        if cfg.target_au and "bce" in cfg.losses:
            target_au = model.au_from_tap(seq).logits
    au_logits, au_records = [], []
    if target_au is not None:
        au_logits.append(target_au)
        au_records.extend(batch.target_samples)
    if batch.auxiliary_samples and "bce" in cfg.losses:
        x = stack_inputs(batch.auxiliary_samples, a_rng, cfg.augment)
        au_logits.append(model.au_logits(x).logits)
        au_records.extend(batch.auxiliary_samples)
    if au_logits:
        z_au = au_logits[0] if len(au_logits) == 1 else concatenate(au_logits, axis=0)
        y, m = _au_arrays(au_records)
        bce = bce_mask_loss(z_au, y, m)
    total = combine(ce, bce, cfg.alpha, cfg.beta)

    # the two terms come from disjoint graphs, so they are back-propagated in turn
    if ce is not None:
        (ce * cfg.alpha).backward()
        if cfg.check_routing and not cfg.target_au:
            params = dict(model.named_parameters())
            leaked = [n for n in groups["au_head"] if params[n].grad is not None]
            if leaked:
                raise InvariantViolation(f"target loss reached AU-head parameters: {leaked[:3]}")
    if bce is not None:
        snap = _GradSnapshot(model, groups["exp_head"]) if cfg.check_routing else None
        (bce * cfg.beta).backward()
        if snap is not None and not snap.unchanged():
            raise InvariantViolation("auxiliary loss reached Exp-head parameters")
    return {
        "loss": total.item(),
        "ce": ce.item() if ce is not None else 0.0,
        "bce": bce.item() if bce is not None else 0.0,
    }


# -- evaluation --------------------------------------------------------------

def worker_count(default: int = 1) -> int:
    raw = os.environ.get("AUVIT_THREADS")
    if raw is None or raw == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"AUVIT_THREADS must be an integer, got {raw!r}", "AUVIT_THREADS") from None
    if n < 1:
        raise ConfigError("AUVIT_THREADS must be at least 1", "AUVIT_THREADS")
    return n


def _chunks(n: int, size: int) -> list:
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def predict_logits(model: AUViT, records, batch_size: int = 64, head: str = "exp",
                   threads: Optional[int] = None) -> np.ndarray:
    """Inference over ``records`` in chunks; chunks may run on worker threads."""
    threads = threads or worker_count()

    def run(span):
        lo, hi = span
        with no_grad():
            x = stack_inputs(records[lo:hi])
            out = model.exp_logits(x) if head == "exp" else model.au_logits(x).logits
        return out.data

    spans = _chunks(len(records), batch_size)
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    return np.concatenate(parts, axis=0)


def confusion_matrix(labels, predictions, num_classes: int) -> np.ndarray:
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(mat, (np.asarray(labels, dtype=np.intp), np.asarray(predictions, dtype=np.intp)), 1)
    return mat


def evaluate(model: AUViT, manifest, batch_size: int = 64, threads: Optional[int] = None) -> EvalResult:
    records = [r for r in manifest.records if r.expr_label is not None]
    if not records:
        raise NoLabels(f"{manifest.name}: no records with expression labels")
    logits = predict_logits(model, records, batch_size, "exp", threads)
    preds = np.argmax(logits, axis=1)
    labels = np.array([r.expr_label for r in records])
    k = model.cfg.num_classes
    if labels.max() >= k:
        raise ShapeMismatch(f"{manifest.name}: label {labels.max()} outside the model's {k} classes")
    mat = confusion_matrix(labels, preds, k)
    return EvalResult(float(np.trace(mat)) / len(records), mat, preds)


def au_f1_macro(model: AUViT, manifest, batch_size: int = 64) -> Optional[float]:
    """Macro F1 over vocabulary AUs that are annotated and occur in ``manifest``."""
    records = [r for r in manifest.records if r.has_au]
    if not records:
        return None
    probs = predict_logits(model, records, batch_size, "au")
    y, m = _au_arrays(records)
    pred = probs > 0.0
    scores = []
    for j in range(y.shape[1]):
        rows = m[:, j] > 0
        truth = y[rows, j] > 0.5
        if not truth.any():
            continue
        guess = pred[rows, j]
        tp = float(np.sum(guess & truth))
        denom = float(np.sum(guess) + np.sum(truth))
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else None


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, model: AUViT, meta: dict) -> None:
    meta = dict(meta)
    meta.setdefault("model", model.cfg.to_dict())
    save_archive(path, model.state_dict(), meta)


def load_checkpoint(path) -> tuple:
    """``(model, meta)`` rebuilt from an archive written by :func:`save_checkpoint`."""
    state, meta = load_archive(path)
    if "model" not in meta:
        raise ConfigError(f"{path}: archive carries no model configuration", "checkpoint")
    model = AUViT(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(state)
    return model, meta


# -- training loop -------------------------------------------------------------

def train(target, aux, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir=None,
          eval_manifest=None, model: Optional[AUViT] = None) -> TrainResult:
    """Train on mixed batches. Writes ``train_log.jsonl`` and ``last`` / ``best``
    checkpoints under ``out_dir`` when given. The run is a pure function of the
    inputs and ``train_cfg.seed``."""
    seed = train_cfg.seed
    model = model if model is not None else AUViT(model_cfg, np.random.default_rng([seed, 0]))
    _check_vocab(aux, model)
    _check_vocab(target, model)
    if target is not None and target.num_classes > model_cfg.num_classes:
        raise ShapeMismatch(f"target has {target.num_classes} classes, model {model_cfg.num_classes}")
    sampler = MixedBatchSampler(target, aux, train_cfg.batch_size, train_cfg.ratio, seed,
                                train_cfg.oversample_balanced)
    steps = train_cfg.steps_per_epoch or sampler.default_steps()
    opt = make_optimizer(model.parameters(), train_cfg)
    rngs = (np.random.default_rng([seed, 3]), np.random.default_rng([seed, 4]))
    groups = model.param_groups()
    eval_set = eval_manifest if eval_manifest is not None else target

    log = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        log = open(out_dir / "train_log.jsonl", "w", encoding="utf-8")
    meta = {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "classes": list(target.expression_classes) if target is not None else [],
        "vocab": list(model.vocab.entries),
    }
    reports, step_logs = [], []
    best = None
    global_step = 0
    try:
        for epoch in range(train_cfg.epochs):
            sums = {"total": 0.0, "ce": 0.0, "bce": 0.0}
            lr = 0.0
            for batch in sampler.epoch(steps):
                lr = lr_at(global_step, train_cfg, steps)
                model.zero_grad()
                parts = train_step(model, batch, train_cfg, rngs, groups)
                opt.lr = lr
                opt.step()
                entry = {"type": "step", "epoch": epoch, "step": global_step, "lr": lr,
                         "alpha": train_cfg.alpha, "beta": train_cfg.beta, **parts}
                step_logs.append(entry)
                if log is not None:
                    log.write(json.dumps(entry, sort_keys=True) + "\n")
                sums["total"] += parts["loss"]
                sums["ce"] += parts["ce"]
                sums["bce"] += parts["bce"]
                global_step += 1
            acc = evaluate(model, eval_set).accuracy if eval_set is not None else None
            f1 = au_f1_macro(model, aux) if train_cfg.au_f1 and aux is not None else None
            report = EpochReport(epoch, {k: v / steps for k, v in sums.items()}, acc, lr, f1)
            reports.append(report)
            if log is not None:
                log.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
                log.flush()
                ckpt_meta = {**meta, "epoch": epoch, "target_accuracy": acc}
                save_checkpoint(out_dir / "checkpoints" / "last.auvt", model, ckpt_meta)
                if acc is not None and (best is None or acc > best):
                    save_checkpoint(out_dir / "checkpoints" / "best.auvt", model, ckpt_meta)
            if acc is not None and (best is None or acc > best):
                best = acc
    finally:
        if log is not None:
            log.close()
    return TrainResult(model, reports, best, step_logs)
