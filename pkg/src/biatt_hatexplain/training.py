"""Multi-task training: cross-entropy on labels plus a weighted attention loss."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import ResolvedPost
from .metrics import macro_f1
from .models import EncoderConfig, HateXplainModel, ModelConfig, pad_batch, save_checkpoint
from .tensor import Tensor

logger = logging.getLogger(__name__)

LAMBDA_GRID = (0.001, 0.01, 0.1, 1, 10, 100)
LEARNING_RATES = (0.1, 0.01, 0.001)
DROPOUTS = (0.1, 0.2, 0.3, 0.4, 0.5)

# hyper-parameter variations for the BiAtt-BiRNN model
TABLE1_GRID = {
    "hidden_units": [64, 128],
    "cell": ["LSTM", "GRU"],
    "train_embeddings": [True, False],
    "dropout_embed": list(DROPOUTS),
    "dropout_fc": list(DROPOUTS),
    "dropout_pre": list(DROPOUTS),
    "learning_rate": list(LEARNING_RATES),
    "lam": list(LAMBDA_GRID),
}

EPOCH_LOG_COLUMNS = ("epoch", "e_pred", "e_att", "e_total", "val_macro_f1", "val_att_loss")


class DivergenceError(RuntimeError):
    """The training loss became non-finite."""


@dataclass
class TrainConfig:
    head: str = "biatt"
    cell: str = "GRU"
    hidden_units: int = 128
    attention_hidden: int | None = None
    train_embeddings: bool = True
    dropout_embed: float = 0.1
    dropout_fc: float = 0.1
    dropout_pre: float = 0.2
    lam: float = 100.0
    supervise_attention: bool = True
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 32
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")

    def check_grid_values(self) -> None:
        """Raise if ``lam`` or ``learning_rate`` fall outside the tuning grid."""
        if self.lam not in (0, *LAMBDA_GRID):
            raise ValueError(f"lam {self.lam} is not in the grid {(0, *LAMBDA_GRID)}")
        if self.learning_rate not in LEARNING_RATES:
            raise ValueError(f"learning_rate {self.learning_rate} is not in the grid {LEARNING_RATES}")

    def model_config(self, vocab_size: int, embedding_dim: int) -> ModelConfig:
        enc = EncoderConfig(cell=self.cell, hidden_units=self.hidden_units, embedding_dim=embedding_dim,
                            train_embeddings=self.train_embeddings, dropout_embed=self.dropout_embed,
                            dropout_fc=self.dropout_fc)
        return ModelConfig(head=self.head, encoder=enc, dropout_pre=self.dropout_pre,
                           attention_hidden=self.attention_hidden, vocab_size=vocab_size, seed=self.seed)

    @classmethod
    def from_dict(cls, obj: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class LossBreakdown:
    e_pred: float
    e_att: float
    e_total: float


# ---------------------------------------------------------------- losses


def prediction_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy ``-log softmax(logits)[label]`` over the batch."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return T.scale(T.sum(T.mul(T.log_softmax(logits), Tensor(onehot))), -1.0 / len(labels))


def attention_loss(pred: Tensor, gt, mask=None) -> Tensor:
    """Mean over posts of ``-sum_t gt_t log(pred_t + 1e-10)`` on unmasked tokens."""
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.ndim == 1:
        pred = T.reshape(pred, (1, pred.shape[0]))
        gt = gt[None]
    if mask is not None:
        gt = np.where(np.asarray(mask, dtype=bool).reshape(gt.shape), gt, 0.0).astype(pred.dtype)
    ll = T.mul(T.log(T.add_scalar(pred, 1e-10)), Tensor(gt))
    return T.scale(T.sum(ll), -1.0 / pred.shape[0])


def total_loss(e_pred: Tensor, e_att: Tensor | None, lam: float, supervise_attention: bool = True):
    """Combine the two losses; returns ``(tensor to differentiate, LossBreakdown)``.

    The attention term enters the graph only when supervision is on and
    ``lam > 0``; otherwise it is reported (or zeroed) without a gradient.
    """
    if not supervise_attention or e_att is None:
        p = e_pred.item()
        return e_pred, LossBreakdown(p, 0.0, p)
    p, a = e_pred.item(), e_att.item()
    breakdown = LossBreakdown(p, a, p + lam * a)
    if lam == 0:
        return e_pred, breakdown
    return T.add(e_pred, T.scale(e_att, lam)), breakdown


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        if lr != 0:
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * grads[k].dtype.type(factor)
    return norm


# ---------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    model: HateXplainModel
    log: list[dict]
    best_epoch: int
    best_val_macro_f1: float
    checkpoint: Path | None = None


def _batch_arrays(posts: Sequence[ResolvedPost], dtype):
    ids, mask = pad_batch([p.token_ids for p in posts])
    gt = np.zeros(ids.shape, dtype=dtype)
    for i, p in enumerate(posts):
        gt[i, :len(p)] = p.gt_attention
    labels = np.array([p.label_index for p in posts], dtype=np.int64)
    return ids, mask, gt, labels


def training_step(model: HateXplainModel, posts: Sequence[ResolvedPost], config: TrainConfig,
                  state: AdamState, rng) -> LossBreakdown:
    ids, mask, gt, labels = _batch_arrays(posts, model.dtype)
    out = model.forward(ids, mask, training=True, rng=rng)
    e_pred = prediction_loss(out.logits, labels)
    supervise = config.supervise_attention and config.lam > 0
    att = out.attention if supervise else out.attention.detach()
    e_att = attention_loss(att, gt, mask) if config.supervise_attention else None
    loss, breakdown = total_loss(e_pred, e_att, config.lam, config.supervise_attention)
    if not math.isfinite(breakdown.e_total):
        raise DivergenceError(f"non-finite loss {breakdown}")
    params = model.trainable()
    T.zero_grad(params.values())
    T.backward(loss)
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    if "embedding" in grads:
        grads["embedding"][0] = 0.0  # padding row stays zero
    clip_grad_norm(grads, config.clip_norm)
    adam_step({k: p.data for k, p in params.items()}, grads, state, config.learning_rate)
    return breakdown


def evaluate_split(model: HateXplainModel, posts: Sequence[ResolvedPost], batch_size: int = 64) -> dict:
    """Eval-mode macro-F1 and mean attention cross-entropy against ground truth."""
    probs, atts = model.predict([p.token_ids for p in posts], batch_size)
    y_true = np.array([p.label_index for p in posts])
    att_ce = [-float(np.sum(np.asarray(p.gt_attention) * np.log(a + 1e-10))) for p, a in zip(posts, atts)]
    return {
        "macro_f1": macro_f1(y_true, probs.argmax(axis=1)),
        "att_loss": float(np.mean(att_ce)),
        "probs": probs,
        "attention": atts,
    }


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_epoch_log(rows: Sequence[dict], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EPOCH_LOG_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in EPOCH_LOG_COLUMNS])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def train(config: TrainConfig, train_posts: Sequence[ResolvedPost], val_posts: Sequence[ResolvedPost],
          embeddings: np.ndarray, out_dir=None, vocab_hash: str | None = None) -> TrainResult:
    """Train with early stopping on validation macro-F1.

    Writes ``epochs.csv`` and the best checkpoint under ``out_dir`` when given.
    Everything random (init, shuffling, dropout) derives from ``config.seed``.
    """
    if not train_posts or not val_posts:
        raise ValueError("train and validation splits must be non-empty")
    model = HateXplainModel(config.model_config(*embeddings.shape), embeddings=embeddings)
    rng = np.random.default_rng(config.seed)
    state = AdamState(config.beta1, config.beta2, config.eps)
    log: list[dict] = []
    best = (-1.0, math.inf, 0)  # (val macro-F1, val attention loss, epoch)
    best_params = {k: p.data.copy() for k, p in model.params.items()}
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_posts))
        sums = np.zeros(3)
        for start in range(0, len(order), config.batch_size):
            batch = [train_posts[i] for i in order[start:start + config.batch_size]]
            try:
                b = training_step(model, batch, config, state, rng)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}, batch starting at {start}: {exc}") from None
            sums += len(batch) * np.array([b.e_pred, b.e_att, b.e_total])
        e_pred, e_att, _ = sums / len(train_posts)
        val = evaluate_split(model, val_posts)
        row = {
            "epoch": epoch,
            "e_pred": float(e_pred),
            "e_att": float(e_att),
            "e_total": float(e_pred + config.lam * e_att),
            "val_macro_f1": float(val["macro_f1"]),
            "val_att_loss": float(val["att_loss"]),
        }
        log.append(row)
        logger.info("epoch %d: %s", epoch, row)
        # ties on macro-F1 go to the lower validation attention loss
        if (row["val_macro_f1"], -row["val_att_loss"]) > (best[0], -best[1]):
            best = (row["val_macro_f1"], row["val_att_loss"], epoch)
            best_params = {k: p.data.copy() for k, p in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for k, p in model.params.items():
        p.data = best_params[k]
    ckpt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_epoch_log(log, out_dir / "epochs.csv")
        ckpt = save_checkpoint(model, out_dir / "checkpoint", vocab_hash,
                               extra={"train_config": asdict(config), "best_epoch": best[2]})
    return TrainResult(model, log, best[2], best[0], ckpt)


# ---------------------------------------------------------------- grid search


def expand_grid(grid: dict[str, list], budget: int | None = None, seed: int = 0) -> list[dict]:
    """All combinations of ``grid`` (or a seeded subset of ``budget`` of them)."""
    keys = sorted(grid)
    combos = [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
    if budget is not None and budget < len(combos):
        idx = sorted(np.random.default_rng(seed).choice(len(combos), size=budget, replace=False))
        combos = [combos[i] for i in idx]
    return combos


def grid_search(grid: dict[str, list], base: TrainConfig, train_posts, val_posts, embeddings,
                out_dir=None, budget: int | None = None, vocab_hash: str | None = None) -> tuple[TrainConfig, list[dict]]:
    """Train every configuration; return the best by validation macro-F1 and the sorted results."""
    results = []
    for i, overrides in enumerate(expand_grid(grid, budget, base.seed)):
        cfg = replace(base, **overrides)
        run_dir = Path(out_dir) / f"run_{i:04d}" if out_dir is not None else None
        res = train(cfg, train_posts, val_posts, embeddings, run_dir, vocab_hash)
        results.append({"run": i, **overrides, "best_epoch": res.best_epoch, "val_macro_f1": res.best_val_macro_f1})
    results.sort(key=lambda r: (-r["val_macro_f1"], r["run"]))
    if out_dir is not None:
        cols = ["run", *sorted(grid), "best_epoch", "val_macro_f1"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        writer.writerows(results)
        (Path(out_dir) / "grid_results.csv").write_text(buf.getvalue(), encoding="utf-8")
    best = results[0]
    return replace(base, **{k: best[k] for k in grid}), results
