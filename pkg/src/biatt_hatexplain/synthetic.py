"""Synthetic HateXplain-format corpora.

The real dataset is not redistributed with this package. These generators
produce posts with the same JSON layout (three annotators, per-annotator
labels, targets and boolean rationales) and a planted, learnable signal:
toxic posts contain a contiguous span of class-specific words, annotators
highlight that span with some boundary jitter, and labels carry annotator
noise so that some posts end up undecided.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Annotation, RawPost, write_dataset

COMMUNITIES = ("African", "Islam", "Jewish", "Women", "Homosexual", "Refugee", "Arab", "Hispanic")

_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "pa", "do", "gu")


def _words(prefix: str, n: int, rng: np.random.Generator) -> list[str]:
    out = set()
    while len(out) < n:
        k = rng.integers(2, 4)
        out.add(prefix + "".join(rng.choice(_SYLLABLES, size=k)))
    return sorted(out)


class Lexicon:
    """Word lists used by :func:`generate_posts`."""

    def __init__(self, seed: int = 1234, n_neutral: int = 400, n_toxic: int = 40):
        rng = np.random.default_rng(seed)
        self.neutral = _words("", n_neutral, rng)
        self.hate = _words("h", n_toxic, rng)
        self.offensive = _words("o", n_toxic, rng)
        self.profanity = _words("x", n_toxic // 2, rng)
        self.mentions = {c: [c.lower() + s for s in ("", "s", "ish")] for c in COMMUNITIES}

    def all_words(self) -> list[str]:
        words = self.neutral + self.hate + self.offensive + self.profanity
        for ms in self.mentions.values():
            words += ms
        return words


_RAW = {"Hateful": "hatespeech", "Offensive": "offensive", "Normal": "normal"}
_CLASS_P = (0.31, 0.28, 0.41)


def generate_posts(n_posts: int, seed: int = 0, lexicon: Lexicon | None = None,
                   min_len: int = 6, max_len: int = 36, label_noise: float = 0.25) -> list[RawPost]:
    rng = np.random.default_rng(seed)
    lex = lexicon or Lexicon()
    neutral, hate, offensive, profanity = (
        np.asarray(w) for w in (lex.neutral, lex.hate, lex.offensive, lex.profanity))
    classes = list(_RAW)
    posts = []
    for i in range(n_posts):
        true = classes[rng.choice(3, p=_CLASS_P)]
        length = int(rng.integers(min_len, max_len + 1))
        tokens = list(neutral[rng.integers(0, len(neutral), size=length)])
        communities: list[str] = []
        span: tuple[int, int] | None = None

        mention_p = {"Hateful": 0.9, "Offensive": 0.5, "Normal": 0.35}[true]
        if rng.random() < mention_p:
            communities = [str(c) for c in rng.choice(COMMUNITIES, size=1 + int(rng.random() < 0.2), replace=False)]
        if true != "Normal":
            width = int(rng.integers(2, min(5, length - 3) + 1))
            start = int(rng.integers(0, length - width + 1))
            pool = hate if true == "Hateful" else offensive
            # class-specific words mixed with profanity shared by both toxic classes
            shared = rng.random(width) < 0.4
            words = np.where(shared, profanity[rng.integers(0, len(profanity), size=width)],
                             pool[rng.integers(0, len(pool), size=width)])
            tokens[start:start + width] = list(words)
            span = (start, start + width)
        elif rng.random() < 0.15:
            tokens[int(rng.integers(0, length))] = str(profanity[rng.integers(0, len(profanity))])
        free = [j for j in range(length) if span is None or not span[0] <= j < span[1]]
        mention_pos = {}
        for c in communities:
            j = int(rng.choice(free))
            free.remove(j)
            tokens[j] = str(rng.choice(lex.mentions[c]))
            mention_pos[c] = j

        annotators, rationales = [], []
        for a in range(3):
            label = true
            if rng.random() < label_noise:
                label = classes[(classes.index(true) + int(rng.integers(1, 3))) % 3]
            targets = [c for c in communities if rng.random() < 0.85]
            if rng.random() < 0.05:
                targets.append(str(rng.choice(COMMUNITIES)))
            annotators.append(Annotation(label=_RAW[label], targets=tuple(sorted(set(targets))), annotator_id=a + 1))
            if label != "Normal" and span is not None:
                lo, hi = span
                lo = max(0, lo + int(rng.integers(-1, 2)) * int(rng.random() < 0.3))
                hi = min(length, hi + int(rng.integers(-1, 2)) * int(rng.random() < 0.3))
                vec = [0] * length
                for j in range(lo, max(hi, lo + 1)):
                    vec[j] = 1
                for j in mention_pos.values():
                    if rng.random() < 0.4:
                        vec[j] = 1
                rationales.append(tuple(vec))
        posts.append(RawPost(
            post_id=f"syn_{seed}_{i:06d}",
            post_tokens=tuple(str(t) for t in tokens),
            annotators=tuple(annotators),
            rationales=tuple(rationales),
        ))
    return posts


def write_embeddings(path, lexicon: Lexicon, dim: int = 50, seed: int = 0, coverage: float = 0.9) -> None:
    """Write a GloVe-style text file in which words of one kind share a cluster."""
    rng = np.random.default_rng(seed)
    centres = {k: rng.normal(0, 0.3, dim) for k in ("neutral", "hate", "offensive", "profanity", "mention")}
    groups = [("neutral", lexicon.neutral), ("hate", lexicon.hate), ("offensive", lexicon.offensive),
              ("profanity", lexicon.profanity),
              ("mention", [w for ms in lexicon.mentions.values() for w in ms])]
    lines = []
    for kind, words in groups:
        for w in words:
            if rng.random() > coverage:
                continue
            vec = centres[kind] + rng.normal(0, 0.1, dim)
            lines.append(w + " " + " ".join(f"{v:.5f}" for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_corpus(path, n_posts: int, seed: int = 0, **kwargs) -> list[RawPost]:
    posts = generate_posts(n_posts, seed=seed, **kwargs)
    write_dataset(posts, path)
    return posts
