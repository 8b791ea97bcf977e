"""HateXplain ingestion: majority-vote resolution, ground-truth attention,
vocabulary, embeddings and stratified splits."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import EmptySequenceError, Tensor, masked_softmax

logger = logging.getLogger(__name__)

HATEFUL, OFFENSIVE, NORMAL = "Hateful", "Offensive", "Normal"
LABELS = (HATEFUL, OFFENSIVE, NORMAL)
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
UNDECIDED = "Undecided"

_RAW_LABELS = {
    "hatespeech": HATEFUL,
    "hate": HATEFUL,
    "hateful": HATEFUL,
    "offensive": OFFENSIVE,
    "normal": NORMAL,
}

PAD_ID, UNK_ID = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
DEFAULT_MAX_LEN = 128


class DatasetFormatError(ValueError):
    """The dataset or embedding file does not have the expected layout."""


class ConfigError(ValueError):
    """Invalid pipeline parameters."""


@dataclass(frozen=True)
class Annotation:
    label: str
    targets: tuple[str, ...] = ()
    annotator_id: int | str | None = None


@dataclass(frozen=True)
class RawPost:
    post_id: str
    post_tokens: tuple[str, ...]
    annotators: tuple[Annotation, ...]
    rationales: tuple[tuple[int, ...], ...] = ()

    def validate(self) -> None:
        if not 1 <= len(self.annotators) <= 3:
            raise DatasetFormatError(f"{self.post_id}: expected 1-3 annotators, got {len(self.annotators)}")
        for r in self.rationales:
            if len(r) != len(self.post_tokens):
                raise DatasetFormatError(
                    f"{self.post_id}: rationale length {len(r)} != token count {len(self.post_tokens)}"
                )
        for a in self.annotators:
            if canonical_label(a.label) is None:
                raise DatasetFormatError(f"{self.post_id}: unknown label {a.label!r}")


@dataclass(frozen=True)
class ResolvedPost:
    post_id: str
    tokens: tuple[str, ...]
    label: str
    communities: frozenset[str]
    gt_attention: tuple[float, ...]
    gt_rationale: tuple[bool, ...]
    token_ids: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]

    def to_json(self) -> dict:
        return {
            "post_id": self.post_id,
            "tokens": list(self.tokens),
            "token_ids": list(self.token_ids),
            "label": self.label,
            "communities": sorted(self.communities),
            "gt_attention": list(self.gt_attention),
            "gt_rationale": [int(b) for b in self.gt_rationale],
        }

    @classmethod
    def from_json(cls, obj: dict) -> ResolvedPost:
        return cls(
            post_id=str(obj["post_id"]),
            tokens=tuple(obj["tokens"]),
            label=obj["label"],
            communities=frozenset(obj["communities"]),
            gt_attention=tuple(float(v) for v in obj["gt_attention"]),
            gt_rationale=tuple(bool(v) for v in obj["gt_rationale"]),
            token_ids=tuple(int(v) for v in obj.get("token_ids", ())),
        )


def canonical_label(label: str) -> str | None:
    if label in LABELS:
        return label
    return _RAW_LABELS.get(str(label).lower())


# ---------------------------------------------------------------- parsing


def _raw_post_from_json(key: str, obj: dict) -> RawPost:
    try:
        annotators = tuple(
            Annotation(
                label=a["label"],
                targets=tuple(t for t in (a.get("target") or ()) if t and t != "None"),
                annotator_id=a.get("annotator_id"),
            )
            for a in obj["annotators"]
        )
        post = RawPost(
            post_id=str(obj.get("post_id", key)),
            post_tokens=tuple(obj["post_tokens"]),
            annotators=annotators,
            rationales=tuple(tuple(int(v) for v in r) for r in obj.get("rationales") or ()),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{key}: malformed entry ({exc})") from exc
    post.validate()
    return post


def parse_dataset(path) -> tuple[list[RawPost], list[tuple[str, str]]]:
    """Read a HateXplain JSON file (an object keyed by post id).

    Returns the parsed posts and a list of ``(post_id, reason)`` for entries
    that failed validation and were skipped.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(blob, dict):
        raise DatasetFormatError(f"{path}: expected a JSON object keyed by post_id")
    posts, rejected = [], []
    for key, obj in blob.items():
        try:
            posts.append(_raw_post_from_json(key, obj))
        except DatasetFormatError as exc:
            rejected.append((str(key), str(exc)))
    if rejected:
        logger.warning("skipped %d malformed posts (first: %s)", len(rejected), rejected[0][0])
    return posts, rejected


def raw_post_to_json(post: RawPost) -> dict:
    return {
        "post_id": post.post_id,
        "annotators": [
            {"label": a.label, "annotator_id": a.annotator_id, "target": list(a.targets) or ["None"]}
            for a in post.annotators
        ],
        "rationales": [list(r) for r in post.rationales],
        "post_tokens": list(post.post_tokens),
    }


def write_dataset(posts: Iterable[RawPost], path) -> None:
    blob = {p.post_id: raw_post_to_json(p) for p in posts}
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


# ---------------------------------------------------------------- resolution


def resolve_label(annotator_labels: Sequence[str]) -> str:
    """Strict-majority label, or ``UNDECIDED`` when no label has one."""
    if not annotator_labels:
        raise ValueError("resolve_label needs at least one annotator label")
    counts = Counter(canonical_label(l) for l in annotator_labels)
    label, n = counts.most_common(1)[0]
    return label if n * 2 > len(annotator_labels) else UNDECIDED


def resolve_targets(annotator_targets: Iterable[Iterable[str]], min_votes: int = 2) -> frozenset[str]:
    counts = Counter(t for targets in annotator_targets for t in set(targets))
    return frozenset(t for t, n in counts.items() if n >= min_votes)


def build_gt_attention(rationales: Sequence[Sequence[int]], label: str, length: int) -> np.ndarray:
    """Ground-truth attention for one post.

    Normal posts get the uniform vector ``1/length``. Otherwise the boolean
    rationale vectors are averaged and passed through a softmax over all
    positions; a toxic post without rationales also falls back to uniform.
    """
    if length <= 0:
        raise EmptySequenceError("cannot build attention for an empty post")
    for r in rationales:
        if len(r) != length:
            raise DatasetFormatError(f"rationale length {len(r)} != token count {length}")
    if label == NORMAL or len(rationales) == 0:
        return np.full(length, 1.0 / length)
    avg = np.mean(np.asarray(rationales, dtype=np.float64), axis=0)
    return masked_softmax(Tensor(avg), np.ones(length, dtype=bool)).data


def majority_rationale(rationales: Sequence[Sequence[int]], label: str, length: int) -> np.ndarray:
    if label == NORMAL or len(rationales) == 0:
        return np.zeros(length, dtype=bool)
    return np.mean(np.asarray(rationales, dtype=np.float64), axis=0) >= 0.5


def resolve_post(raw: RawPost, max_len: int = DEFAULT_MAX_LEN) -> ResolvedPost | None:
    """Resolve one post; ``None`` for undecided or empty posts."""
    label = resolve_label([a.label for a in raw.annotators])
    if label == UNDECIDED or not raw.post_tokens:
        return None
    tokens = raw.post_tokens[:max_len]
    rationales = [r[:max_len] for r in raw.rationales]
    gt = build_gt_attention(rationales, label, len(tokens))
    return ResolvedPost(
        post_id=raw.post_id,
        tokens=tuple(tokens),
        label=label,
        communities=resolve_targets(a.targets for a in raw.annotators),
        gt_attention=tuple(float(v) for v in gt),
        gt_rationale=tuple(bool(v) for v in majority_rationale(rationales, label, len(tokens))),
    )


def resolve_posts(raws: Iterable[RawPost], max_len: int = DEFAULT_MAX_LEN) -> tuple[list[ResolvedPost], list[str]]:
    """Resolve many posts; also returns the ids dropped as undecided."""
    resolved, dropped = [], []
    for raw in raws:
        post = resolve_post(raw, max_len)
        if post is None:
            dropped.append(raw.post_id)
        else:
            resolved.append(post)
    return resolved, dropped


# ---------------------------------------------------------------- vocabulary


@dataclass
class Vocabulary:
    itos: list[str] = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])

    def __post_init__(self):
        if self.itos[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with the padding and unknown tokens")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(t) for t in tokens)

    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.itos, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(posts: Iterable, min_freq: int = 1) -> Vocabulary:
    """Index every token seen at least ``min_freq`` times.

    ``posts`` may hold token sequences or objects with a ``tokens`` or
    ``post_tokens`` attribute. Ordering is by descending frequency, then
    lexicographic, so the result is independent of input order.
    """
    if min_freq < 1:
        raise ConfigError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    for p in posts:
        toks = getattr(p, "tokens", None) or getattr(p, "post_tokens", None) or p
        if isinstance(toks, str):
            toks = toks.split()
        counts.update(toks)
    kept = sorted((t for t, n in counts.items() if n >= min_freq and t not in (PAD_TOKEN, UNK_TOKEN)),
                  key=lambda t: (-counts[t], t))
    return Vocabulary([PAD_TOKEN, UNK_TOKEN, *kept])


def encode_posts(posts: Iterable[ResolvedPost], vocab: Vocabulary) -> list[ResolvedPost]:
    return [replace(p, token_ids=vocab.encode(p.tokens)) for p in posts]


# ---------------------------------------------------------------- embeddings


def random_embeddings(vocab: Vocabulary, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim)).astype(np.float32)
    matrix[PAD_ID] = 0.0
    return matrix


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> np.ndarray:
    """Build a ``len(vocab) x dim`` float32 matrix from a GloVe-style text file.

    Rows for tokens found in the file are copied; the rest are drawn
    uniformly from [-0.05, 0.05] with ``seed``. The padding row is zero.
    """
    matrix = random_embeddings(vocab, dim, seed)
    found = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != dim + 1:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}"
                )
            idx = vocab.stoi.get(parts[0])
            if idx is None or idx == PAD_ID:
                continue
            try:
                matrix[idx] = np.asarray(parts[1:], dtype=np.float32)
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
            found += 1
    logger.info("embeddings: %d of %d vocabulary rows found in %s", found, len(vocab), path)
    return matrix


# ---------------------------------------------------------------- splits


def split_dataset(posts: Sequence[ResolvedPost], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, list[str]]:
    """Stratified train/val/test partition of post ids, deterministic in ``seed``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    out: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    position = {p.post_id: i for i, p in enumerate(posts)}
    for label in LABELS:
        ids = [p.post_id for p in posts if p.label == label]
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_train = int(round(len(ids) * ratios[0]))
        n_val = min(int(round(len(ids) * ratios[1])), len(ids) - n_train)
        out["train"] += ids[:n_train]
        out["val"] += ids[n_train:n_train + n_val]
        out["test"] += ids[n_train + n_val:]
    for key in out:
        out[key].sort(key=position.__getitem__)
    return out


def split_manifest(splits: dict[str, list[str]], ratios, seed: int) -> dict:
    return {"seed": seed, "ratios": list(ratios), **{k: list(v) for k, v in splits.items()}}


# ---------------------------------------------------------------- processed files


def write_processed(posts: Iterable[ResolvedPost], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in posts:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def read_processed(path) -> list[ResolvedPost]:
    with open(path, encoding="utf-8") as fh:
        return [ResolvedPost.from_json(json.loads(line)) for line in fh if line.strip()]


def stratified_subset(posts: Sequence[ResolvedPost], n: int, seed: int = 0) -> list[ResolvedPost]:
    """Draw ``n`` posts keeping the label proportions of ``posts``."""
    if n >= len(posts):
        return list(posts)
    ids = split_dataset(posts, (n / len(posts), 1 - n / len(posts), 0.0), seed)["train"]
    keep = set(ids)
    return [p for p in posts if p.post_id in keep]
