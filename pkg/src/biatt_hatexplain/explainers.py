"""Token attributions: model attention, LIME and exact Shapley values.

The post-hoc explainers work on a *mask function*: a callable mapping a
batch of boolean keep-masks ``[n, L]`` to model outputs, either ``[n]`` or
class probabilities ``[n, C]``. Dropped tokens are replaced by the padding
id (zero embedding); :meth:`HateXplainModel.probability_fn` builds such a
function for a trained model and a post.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

MAX_SHAP_TOKENS = 20
METHODS = ("Attn", "LIME", "SHAP")


class ConditioningError(np.linalg.LinAlgError):
    """The LIME design matrix stayed singular after raising the ridge penalty."""


class ExplanationSizeError(ValueError):
    """Too many tokens for exact Shapley enumeration."""


@dataclass
class Explanation:
    token_scores: np.ndarray
    method: str
    selected: np.ndarray | None = None
    class_explained: int | None = None
    post_id: str | None = None
    base_value: float | None = None

    def __post_init__(self):
        self.token_scores = np.asarray(self.token_scores, dtype=np.float64)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.selected is not None:
            self.selected = np.asarray(self.selected, dtype=bool)
            if self.selected.shape != self.token_scores.shape:
                raise ValueError("selection and scores differ in length")

    def __len__(self) -> int:
        return len(self.token_scores)

    def to_json(self) -> dict:
        return {
            "post_id": self.post_id,
            "method": self.method,
            "token_scores": self.token_scores.tolist(),
            "selected": None if self.selected is None else self.selected.astype(int).tolist(),
            "class_explained": self.class_explained,
        }


def write_explanations(explanations: Iterable[Explanation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in explanations:
            fh.write(json.dumps(e.to_json()) + "\n")


def _class_output(fn: Callable, target: int | None):
    """Wrap ``fn`` to return the explained class column, resolving ``target``."""
    def out(masks):
        y = np.asarray(fn(masks), dtype=np.float64)
        return y if y.ndim == 1 else y[:, target]
    return out


def _resolve_target(fn: Callable, n_tokens: int, target: int | None) -> int | None:
    if target is not None:
        return target
    y = np.asarray(fn(np.ones((1, n_tokens), dtype=bool)))
    return None if y.ndim == 1 else int(np.argmax(y[0]))


def attention_explain(model, post, k: int | None = None) -> Explanation:
    """The model's own eval-mode attention as token scores."""
    out = model.forward_post(post)
    scores = out.attention.data[0].astype(np.float64)
    exp = Explanation(scores, "Attn", class_explained=int(np.argmax(out.logits.data[0])), post_id=post.post_id)
    if k is not None:
        exp.selected = to_discrete(exp, k)
    return exp


def _weighted_ridge(z: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float):
    """Closed-form weighted ridge with an unpenalised intercept."""
    x = np.hstack([np.ones((len(z), 1)), z])
    penalty = np.full(x.shape[1], alpha)
    penalty[0] = 0.0
    xtw = x.T * w
    a = xtw @ x + np.diag(penalty)
    if np.linalg.cond(a) > 1e12:
        raise np.linalg.LinAlgError("ill-conditioned normal equations")
    coef = np.linalg.solve(a, xtw @ y)
    return coef[0], coef[1:]


def lime_explain(fn: Callable, n_tokens: int, target: int | None = None, n_samples: int = 500,
                 kernel_width: float = 0.25, alpha: float = 1.0, seed: int = 0,
                 post_id: str | None = None, k: int | None = None) -> Explanation:
    """Local linear surrogate over random token removals.

    Samples ``n_samples`` uniform keep-masks (the first is the unperturbed
    post), evaluates the model on each, weights samples by
    ``exp(-D^2 / kernel_width^2)`` with ``D`` the fraction of tokens removed,
    and fits a weighted ridge regression from masks to the explained output.
    Weights are rescaled to sum to ``n_samples`` so that ``alpha`` acts on
    the same scale as an unweighted fit.
    """
    if n_samples < 10:
        raise ValueError("lime_explain needs n_samples >= 10")
    if n_tokens < 1:
        raise ValueError("cannot explain an empty post")
    rng = np.random.default_rng(seed)
    target = _resolve_target(fn, n_tokens, target)
    masks = rng.random((n_samples, n_tokens)) < 0.5
    masks[0] = True
    y = _class_output(fn, target)(masks)
    dist = 1.0 - masks.mean(axis=1)
    w = np.exp(-(dist ** 2) / kernel_width ** 2)
    w *= n_samples / w.sum()
    z = masks.astype(np.float64)
    try:
        _, coef = _weighted_ridge(z, y, w, alpha)
    except np.linalg.LinAlgError:
        try:
            _, coef = _weighted_ridge(z, y, w, alpha * 10 if alpha > 0 else 1.0)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"LIME surrogate is ill-conditioned for {n_tokens} tokens") from exc
    exp = Explanation(coef, "LIME", class_explained=target, post_id=post_id)
    if k is not None:
        exp.selected = to_discrete(exp, k)
    return exp


def shap_exact(fn: Callable, n_tokens: int, target: int | None = None,
               post_id: str | None = None, k: int | None = None, batch_size: int = 4096) -> Explanation:
    """Exact Shapley values by enumerating all ``2^M`` token subsets.

    ``phi_t = sum_{S not containing t} |S|!(M-|S|-1)!/M! (f(S+t) - f(S))``,
    with removed tokens set to padding. ``base_value`` holds ``f(empty)``.
    """
    m = n_tokens
    if m > MAX_SHAP_TOKENS:
        raise ExplanationSizeError(f"{m} tokens exceeds {MAX_SHAP_TOKENS} for exact Shapley; use lime_explain")
    if m < 1:
        raise ValueError("cannot explain an empty post")
    target = _resolve_target(fn, m, target)
    f = _class_output(fn, target)
    codes = np.arange(2 ** m, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    values = np.concatenate([f(bits[i:i + batch_size]) for i in range(0, len(bits), batch_size)])
    sizes = bits.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) if s < m else 0.0
                       for s in range(m + 1)])
    phi = np.empty(m)
    for t in range(m):
        without = codes[~bits[:, t]]
        phi[t] = np.sum(weight[sizes[without]] * (values[without | (1 << t)] - values[without]))
    exp = Explanation(phi, "SHAP", class_explained=target, post_id=post_id, base_value=float(values[0]))
    if k is not None:
        exp.selected = to_discrete(exp, k)
    return exp


def to_discrete(explanation, k: int = 5) -> np.ndarray:
    """Top-``k`` tokens by score, ties to the lowest index; ``k`` is clamped to the length."""
    scores = np.asarray(getattr(explanation, "token_scores", explanation), dtype=np.float64)
    if k < 0:
        raise ValueError("k must be non-negative")
    k = min(k, len(scores))
    order = np.lexsort((np.arange(len(scores)), -scores))
    selected = np.zeros(len(scores), dtype=bool)
    selected[order[:k]] = True
    return selected
