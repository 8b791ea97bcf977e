"""BiRNN encoder with a matrix or BiAtt attention head and a max-pool FCN.

Data flow for a batch of padded posts ``ids[B, L]``::

    embed -> dropout -> BiRNN -> H[B, L, 2h]
    H -> head -> attention a[B, L]
    (a_t * H_t) -> max over tokens -> dropout -> FCN -> logits[B, 3]

The matrix head scores each token independently (``H_t . w``). The BiAtt
head runs a second BiRNN over (dropped-out) ``H`` and scores its outputs
with ``u``, so each token's score depends on its neighbours.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock

from . import tensor as T
from .data import PAD_ID
from .tensor import Tensor

CELLS = ("GRU", "LSTM")
HEADS = ("matrix", "biatt")
N_CLASSES = 3
CHECKPOINT_FORMAT = 1


@dataclass
class EncoderConfig:
    cell: str = "GRU"
    hidden_units: int = 128
    embedding_dim: int = 300
    train_embeddings: bool = True
    dropout_embed: float = 0.1
    dropout_fc: float = 0.1

    def validate(self) -> None:
        if self.cell not in CELLS:
            raise ValueError(f"cell must be one of {CELLS}, got {self.cell!r}")
        for name in ("dropout_embed", "dropout_fc"):
            p = getattr(self, name)
            if not 0.0 <= p <= 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5], got {p}")


@dataclass
class ModelConfig:
    head: str = "biatt"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dropout_pre: float = 0.2
    attention_hidden: int | None = None  # defaults to encoder hidden size
    vocab_size: int = 2
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)

    @property
    def h_att(self) -> int:
        return self.attention_hidden or self.encoder.hidden_units

    def validate(self) -> None:
        self.encoder.validate()
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if not 0.0 <= self.dropout_pre <= 0.5:
            raise ValueError(f"dropout_pre must lie in [0, 0.5], got {self.dropout_pre}")


@dataclass
class ModelOutput:
    logits: Tensor  # [B, 3]
    attention: Tensor  # [B, L]
    mask: np.ndarray  # [B, L]

    def probabilities(self) -> np.ndarray:
        z = self.logits.data.astype(np.float64)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------- recurrent cells


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_cell(rng, cell: str, d_in: int, hidden: int, dtype=np.float32) -> dict[str, np.ndarray]:
    gates = 3 if cell == "GRU" else 4
    params = {
        "W_x": _uniform(rng, (d_in, gates * hidden), d_in, dtype),
        "W_h": _uniform(rng, (hidden, gates * hidden), hidden, dtype),
        "b_x": _uniform(rng, (gates * hidden,), hidden, dtype),
    }
    if cell == "GRU":
        params["b_h"] = _uniform(rng, (gates * hidden,), hidden, dtype)
    return params


def _cell_step(cell: str, p: dict[str, Tensor], xw: Tensor, state):
    """One recurrence step given the input projection ``xw = x W_x + b_x``."""
    if cell == "GRU":
        h = state
        n = h.shape[-1]
        hw = T.add_bias(T.matmul(h, p["W_h"]), p["b_h"])
        r = T.sigmoid(xw[..., :n] + hw[..., :n])
        z = T.sigmoid(xw[..., n:2 * n] + hw[..., n:2 * n])
        cand = T.tanh(xw[..., 2 * n:] + r * hw[..., 2 * n:])
        return cand + z * (h - cand)  # (1 - z) * cand + z * h
    h, c = state
    n = h.shape[-1]
    g = xw + T.matmul(h, p["W_h"])
    i = T.sigmoid(g[..., :n])
    f = T.sigmoid(g[..., n:2 * n])
    u = T.tanh(g[..., 2 * n:3 * n])
    o = T.sigmoid(g[..., 3 * n:])
    c = f * c + i * u
    return o * T.tanh(c), c


def rnn_cell_forward(cell: str, params: dict[str, Tensor], x_t: Tensor, state):
    """Advance a GRU (``state = h``) or LSTM (``state = (h, c)``) by one input."""
    xw = T.add_bias(T.matmul(x_t, params["W_x"]), params["b_x"])
    return _cell_step(cell, params, xw, state)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def _run_direction(cell: str, p: dict[str, Tensor], xw: Tensor, mask: np.ndarray, reverse: bool) -> Tensor:
    B, L = mask.shape
    hidden = p["W_h"].shape[0]
    dtype = xw.dtype
    zero = _zeros((B, hidden), dtype)
    h = zero
    c = zero if cell == "LSTM" else None
    outs: list[Tensor] = [zero] * L
    for t in (range(L - 1, -1, -1) if reverse else range(L)):
        m = mask[:, t]
        if not m.any():
            continue
        new = _cell_step(cell, p, xw[:, t], h if cell == "GRU" else (h, c))
        new_h, new_c = (new, None) if cell == "GRU" else new
        if m.all():
            h, c = new_h, new_c
            outs[t] = h
        else:
            mm = np.broadcast_to(m[:, None], (B, hidden))
            h = T.where(mm, new_h, h)
            if cell == "LSTM":
                c = T.where(mm, new_c, c)
            outs[t] = T.where(mm, h, zero)
    return T.stack(outs, axis=1)


def birnn_forward(cell: str, fwd: dict[str, Tensor], bwd: dict[str, Tensor], x: Tensor, mask) -> Tensor:
    """Bidirectional recurrence over ``x[B, L, d]`` (or ``[L, d]``).

    Row ``t`` of the result is the forward state after token ``t`` joined to
    the backward state after token ``t``; the backward direction starts from
    the last unmasked token. Masked positions are zero and never update the
    state.
    """
    mask = np.asarray(mask, dtype=bool)
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
        mask = mask[None]
    if mask.shape != x.shape[:2]:
        raise T.ShapeError(f"mask {mask.shape} does not match inputs {x.shape}")
    if x.shape[1] == 0 or not mask.any(axis=1).all():
        raise T.EmptySequenceError("birnn_forward needs at least one unmasked token per sequence")
    f = _run_direction(cell, fwd, T.add_bias(T.matmul(x, fwd["W_x"]), fwd["b_x"]), mask, reverse=False)
    b = _run_direction(cell, bwd, T.add_bias(T.matmul(x, bwd["W_x"]), bwd["b_x"]), mask, reverse=True)
    out = T.concat([f, b], axis=-1)
    return T.reshape(out, out.shape[1:]) if single else out


# ---------------------------------------------------------------- heads and classifier


def _scores(h: Tensor, vec: Tensor) -> Tensor:
    s = T.matmul(h, T.reshape(vec, (vec.shape[0], 1)))
    return T.reshape(s, s.shape[:-1])


def matrix_attention(h: Tensor, mask, w: Tensor) -> Tensor:
    """Per-token dot-product scores ``H_t . w`` normalised over the mask."""
    return T.masked_softmax(_scores(h, w), mask)


def biatt_attention(h: Tensor, mask, cell: str, fwd: dict[str, Tensor], bwd: dict[str, Tensor], u: Tensor,
                    dropout_pre: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """Attention scored by an inner BiRNN run over the contextual features."""
    h = T.dropout(h, dropout_pre, training, rng)
    a = birnn_forward(cell, fwd, bwd, h, mask)
    return T.masked_softmax(_scores(a, u), mask)


def classify(h: Tensor, attention: Tensor, mask, fc: dict[str, Tensor],
             dropout_fc: float = 0.0, training: bool = False, rng=None) -> Tensor:
    weighted = T.scale_rows(h, attention)
    pooled = T.max_over_tokens(weighted, mask)
    pooled = T.dropout(pooled, dropout_fc, training, rng)
    hidden = T.tanh(T.add_bias(T.matmul(pooled, fc["W1"]), fc["b1"]))
    return T.add_bias(T.matmul(hidden, fc["W2"]), fc["b2"])


# ---------------------------------------------------------------- batching


def pad_batch(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Pad id sequences to the longest one; returns ``(ids, mask)``."""
    if not sequences:
        raise ValueError("empty batch")
    L = max(len(s) for s in sequences)
    if L == 0:
        raise T.EmptySequenceError("batch contains only empty posts")
    ids = np.full((len(sequences), L), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sequences), L), dtype=bool)
    for i, s in enumerate(sequences):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


# ---------------------------------------------------------------- model


class HateXplainModel:
    """Parameters plus the forward computation for one architecture."""

    def __init__(self, config: ModelConfig, embeddings: np.ndarray | None = None, dtype=np.float32):
        config.validate()
        self.config = config
        enc = config.encoder
        rng = np.random.default_rng(config.seed)
        if embeddings is None:
            embeddings = rng.uniform(-0.05, 0.05, size=(config.vocab_size, enc.embedding_dim))
            embeddings[PAD_ID] = 0.0
        embeddings = np.asarray(embeddings)
        config.vocab_size, enc.embedding_dim = embeddings.shape
        h, ha = enc.hidden_units, config.h_att

        arrays: dict[str, np.ndarray] = {"embedding": embeddings.astype(dtype)}
        for direction in ("fwd", "bwd"):
            for k, v in init_cell(rng, enc.cell, enc.embedding_dim, h, dtype).items():
                arrays[f"encoder.{direction}.{k}"] = v
        if config.head == "matrix":
            arrays["head.w"] = _uniform(rng, (2 * h,), 2 * h, dtype)
        else:
            for direction in ("fwd", "bwd"):
                for k, v in init_cell(rng, enc.cell, 2 * h, ha, dtype).items():
                    arrays[f"head.rnn.{direction}.{k}"] = v
            arrays["head.u"] = _uniform(rng, (2 * ha,), 2 * ha, dtype)
        arrays["fc.W1"] = _uniform(rng, (2 * h, 2 * h), 2 * h, dtype)
        arrays["fc.b1"] = _uniform(rng, (2 * h,), 2 * h, dtype)
        arrays["fc.W2"] = _uniform(rng, (2 * h, N_CLASSES), 2 * h, dtype)
        arrays["fc.b2"] = _uniform(rng, (N_CLASSES,), 2 * h, dtype)

        self.params = {
            name: Tensor(arr, requires_grad=(name != "embedding" or enc.train_embeddings), name=name)
            for name, arr in arrays.items()
        }
        self.rng = np.random.default_rng(config.seed + 1)

    @property
    def dtype(self):
        return self.params["fc.W1"].dtype

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def _group(self, prefix: str) -> dict[str, Tensor]:
        n = len(prefix)
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix)}

    def astype(self, dtype) -> HateXplainModel:
        clone = HateXplainModel.__new__(HateXplainModel)
        clone.config = self.config
        clone.params = {k: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad, name=k)
                        for k, p in self.params.items()}
        clone.rng = np.random.default_rng(self.config.seed + 1)
        return clone

    def encode(self, ids: np.ndarray, mask: np.ndarray, training: bool = False, rng=None) -> Tensor:
        enc = self.config.encoder
        x = T.embedding(self.params["embedding"], ids)
        x = T.dropout(x, enc.dropout_embed, training, rng)
        return birnn_forward(enc.cell, self._group("encoder.fwd."), self._group("encoder.bwd."), x, mask)

    def attend(self, h: Tensor, mask: np.ndarray, training: bool = False, rng=None) -> Tensor:
        if self.config.head == "matrix":
            return matrix_attention(h, mask, self.params["head.w"])
        return biatt_attention(h, mask, self.config.encoder.cell, self._group("head.rnn.fwd."),
                               self._group("head.rnn.bwd."), self.params["head.u"],
                               self.config.dropout_pre, training, rng)

    def forward(self, ids, mask=None, training: bool = False, rng=None) -> ModelOutput:
        """Run a padded batch ``ids[B, L]``; ``mask`` defaults to all positions.

        Padding ids inside the mask are real positions with a zero embedding,
        which is how explainers and faithfulness metrics remove tokens.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(ids.shape)
        if training and rng is None:
            rng = self.rng
        h = self.encode(ids, mask, training, rng)
        att = self.attend(h, mask, training, rng)
        logits = classify(h, att, mask, self._group("fc."), self.config.encoder.dropout_fc, training, rng)
        return ModelOutput(logits=logits, attention=att, mask=mask)

    def forward_post(self, post, training: bool = False, rng=None) -> ModelOutput:
        return self.forward(np.asarray(post.token_ids)[None], training=training, rng=rng)

    def predict(self, sequences: Sequence[Sequence[int]], batch_size: int = 64) -> tuple[np.ndarray, list[np.ndarray]]:
        """Eval-mode class probabilities ``[n, 3]`` and per-post attention vectors."""
        probs, atts = [], []
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start:start + batch_size]
            ids, mask = pad_batch(chunk)
            out = self.forward(ids, mask)
            probs.append(out.probabilities())
            atts += [out.attention.data[i, :len(s)].astype(np.float64) for i, s in enumerate(chunk)]
        return np.concatenate(probs), atts

    def probability_fn(self, token_ids: Sequence[int], batch_size: int = 256):
        """Map keep-masks ``[n, L]`` to class probabilities ``[n, 3]``.

        Dropped tokens are replaced by the padding id; the sequence length is
        unchanged.
        """
        base = np.asarray(token_ids, dtype=np.int64)

        def fn(keep: np.ndarray) -> np.ndarray:
            keep = np.atleast_2d(np.asarray(keep, dtype=bool))
            ids = np.where(keep, base[None, :], PAD_ID)
            out = [self.forward(ids[i:i + batch_size]).probabilities() for i in range(0, len(ids), batch_size)]
            return np.concatenate(out)

        return fn


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: HateXplainModel, directory, vocab_hash: str | None = None, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus one little-endian float32 file per parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with FileLock(str(directory / ".lock")):
        entries = []
        for name, p in model.params.items():
            fname = f"{name}.bin"
            (directory / fname).write_bytes(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
            entries.append({"name": name, "shape": list(p.shape), "file": fname})
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "architecture": model.config.head,
            "cell": model.config.encoder.cell,
            "config": asdict(model.config),
            "seed": model.config.seed,
            "vocab_hash": vocab_hash,
            "parameters": entries,
            **(extra or {}),
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_checkpoint(directory) -> tuple[HateXplainModel, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{directory}: unsupported checkpoint format {manifest.get('format')}")
    config = ModelConfig(**manifest["config"])
    model = HateXplainModel.__new__(HateXplainModel)
    model.config = config
    model.params = {}
    for entry in manifest["parameters"]:
        raw = np.frombuffer((directory / entry["file"]).read_bytes(), dtype="<f4")
        arr = raw.astype(np.float32).reshape(entry["shape"])
        name = entry["name"]
        model.params[name] = Tensor(arr, requires_grad=(name != "embedding" or config.encoder.train_embeddings), name=name)
    model.rng = np.random.default_rng(config.seed + 1)
    return model, manifest
